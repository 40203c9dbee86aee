// Stand-in external model speaking the line protocol on stdin/stdout.
//
//   fake_model fixed P       answer P for every request
//   fake_model reverse N     buffer N requests, answer them in reverse order with P = 0.25
//   fake_model sleep S       wait S seconds before each answer
//   fake_model malformed     answer with a line that is not JSON
//   fake_model range         answer 1.5
//   fake_model unknown       answer for an id nobody asked about

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace {

void answer(const std::string& id, double p) {
    std::cout << nlohmann::json{{"id", id}, {"probability", p}}.dump() << '\n' << std::flush;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: fake_model MODE [ARG]\n";
        return 2;
    }
    const std::string mode = argv[1];
    const double arg = argc > 2 ? std::atof(argv[2]) : 0.0;
    std::vector<std::string> held;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        const auto id = nlohmann::json::parse(line).at("id").get<std::string>();
        if (mode == "fixed") {
            answer(id, arg);
        } else if (mode == "reverse") {
            held.push_back(id);
            if (held.size() == static_cast<std::size_t>(arg)) {
                for (auto it = held.rbegin(); it != held.rend(); ++it) answer(*it, 0.25);
                held.clear();
            }
        } else if (mode == "sleep") {
            std::this_thread::sleep_for(std::chrono::duration<double>(arg));
            answer(id, 0.5);
        } else if (mode == "malformed") {
            std::cout << "probability=0.5\n" << std::flush;
        } else if (mode == "range") {
            answer(id, 1.5);
        } else if (mode == "unknown") {
            answer("nobody", 0.5);
        } else {
            std::cerr << "unknown mode " << mode << '\n';
            return 2;
        }
    }
    return 0;
}
