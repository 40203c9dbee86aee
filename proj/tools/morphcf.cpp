// Batch entry points: dataset generation, prediction, recombination runs, summaries,
// re-segmentation fidelity and the HTTP service.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

#include "morphcf/cohort.hpp"
#include "morphcf/dataset.hpp"
#include "morphcf/engine.hpp"
#include "morphcf/error.hpp"
#include "morphcf/gateway.hpp"
#include "morphcf/rng.hpp"
#include "morphcf/seg_eval.hpp"
#include "morphcf/service.hpp"
#include "morphcf/synthetic.hpp"
#include "morphcf/volume_io.hpp"

namespace fs = std::filesystem;
using namespace morphcf;

namespace {

constexpr int exit_validation = 2;
constexpr int exit_io = 3;
constexpr int exit_transport = 4;

struct ModelOptions {
    std::string spec = "synthetic";
    double timeout = 30.0;
    std::size_t batch = 16;
};

void add_model_options(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--model", m.spec, "synthetic | cmd:<command line> | http:<url>");
    cmd->add_option("--timeout", m.timeout, "external model timeout, seconds")->check(CLI::PositiveNumber);
    cmd->add_option("--batch", m.batch, "requests per model call")->check(CLI::PositiveNumber);
}

std::shared_ptr<ClassifierGateway> make_gateway(const ModelOptions& m, const Dataset& dataset) {
    std::shared_ptr<ModelBackend> backend;
    if (m.spec == "synthetic") {
        backend = std::make_shared<SyntheticBackend>(synthetic::constants_from_manifest(dataset.manifest()));
    } else {
        backend = make_backend(m.spec, m.timeout, m.batch);
    }
    return std::make_shared<ClassifierGateway>(backend, m.batch);
}

std::vector<std::string> read_id_file(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    std::vector<std::string> ids;
    std::string line;
    for (char c : bytes) {
        if (c == '\n') {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty() && line.front() != '#') ids.push_back(line);
            line.clear();
        } else {
            line += c;
        }
    }
    if (!line.empty() && line.front() != '#') ids.push_back(line);
    return ids;
}

std::vector<SegmentSelection> parse_segments(const std::string& text, const SegmentSchema& schema) {
    if (text == "all") return combinations(schema);
    std::vector<SegmentSelection> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find(',', start);
        if (end == std::string::npos) end = text.size();
        out.push_back(SegmentSelection::parse(text.substr(start, end - start), schema));
        start = end + 1;
    }
    return out;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_file_atomic(out_path, text);
    }
}

/// Loads the dataset a run was made from and checks it is unchanged.
Dataset run_dataset(const RunArtifact& art, const std::string& override_dir) {
    auto dataset = Dataset::load(override_dir.empty() ? fs::path(art.dataset_path) : fs::path(override_dir));
    if (dataset.digest() != art.dataset_digest) {
        throw ValidationError("dataset digest " + dataset.digest() + " differs from the run's " + art.dataset_digest);
    }
    return dataset;
}

std::string dataset_from_env(const std::string& flag_value) {
    if (const char* env = std::getenv("MORPHCF_DATASET"); env && *env) return env;
    return flag_value;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"morphcf: segment-transplant counterfactuals for segmented image classifiers"};
    app.require_subcommand(1);
    app.fallthrough();
    unsigned jobs = 0;
    app.add_option("--jobs", jobs, "worker threads (default: available parallelism)");

    // gen
    synthetic::GenerateOptions gen;
    std::string gen_out;
    auto* gen_cmd = app.add_subcommand("gen", "write a synthetic phantom dataset");
    gen_cmd->add_option("--subjects", gen.subjects, "subject count (>= 2)")->required();
    gen_cmd->add_option("--seed", gen.seed, "generator seed")->required();
    gen_cmd->add_option("--out", gen_out, "output directory")->required();
    gen_cmd->add_option("--frames", gen.frames, "frames per volume");
    gen_cmd->add_option("--size", gen.size, "frame height and width (>= 128)");
    gen_cmd->add_option("--noise", gen.noise_sigma, "pixel noise sigma");

    // predict
    std::string dataset_dir;
    ModelOptions model;
    auto* predict_cmd = app.add_subcommand("predict", "fill predicted_label/probability in the demographics table");
    predict_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
    add_model_options(predict_cmd, model);

    // subset
    std::vector<std::string> by;
    int label = -1;
    std::size_t limit = 0;
    std::string out_path;
    auto* subset_cmd = app.add_subcommand("subset", "write the ids surviving demographic filters, one per line");
    subset_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
    subset_cmd->add_option("--label", label, "keep subjects with this predicted label")->check(CLI::Range(0, 1));
    subset_cmd->add_option("--by", by, "filter clause var=lo:hi or var=a|b; repeatable, applied in order");
    subset_cmd->add_option("--limit", limit, "keep at most this many ids");
    subset_cmd->add_option("--out", out_path, "id file (default stdout)");

    // recombine
    std::string targets_file, sources_file, segments, run_out;
    bool store_volumes = false;
    auto* recombine_cmd = app.add_subcommand("recombine", "run every target x source x selection recombination");
    recombine_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
    recombine_cmd->add_option("--targets", targets_file, "target id file")->required();
    recombine_cmd->add_option("--sources", sources_file, "source id file")->required();
    recombine_cmd->add_option("--segments", segments,
                              "'all', or comma-separated selections of '+'-joined segment names")->required();
    recombine_cmd->add_option("--out", run_out, "new run directory")->required();
    recombine_cmd->add_flag("--store-volumes", store_volumes, "also write recombined volumes");
    add_model_options(recombine_cmd, model);

    // summarize
    std::string run_dir, by_clause;
    auto* summarize_cmd = app.add_subcommand("summarize", "counterfactual counts per segment selection (CSV)");
    summarize_cmd->add_option("--run", run_dir, "run directory")->required();
    summarize_cmd->add_option("--by", by_clause, "restrict to sources matching var=lo:hi or var=a|b");
    summarize_cmd->add_option("--dataset", dataset_dir, "dataset directory (default: the run's)");
    summarize_cmd->add_option("--out", out_path, "CSV path (default stdout)");

    // eval-seg
    std::size_t sample = 0;
    std::uint64_t seed = 0;
    auto* eval_cmd = app.add_subcommand("eval-seg", "re-segment sampled recombinations and report Dice (CSV)");
    eval_cmd->add_option("--run", run_dir, "run directory")->required();
    eval_cmd->add_option("--sample", sample, "number of recombinations")->required();
    eval_cmd->add_option("--seed", seed, "sampling seed")->required();
    eval_cmd->add_option("--dataset", dataset_dir, "dataset directory (default: the run's)");
    eval_cmd->add_option("--out", out_path, "CSV path (default stdout)");

    // serve
    ServiceOptions service;
    std::string runs_dir;
    auto* serve_cmd = app.add_subcommand("serve", "serve the HTTP API (MORPHCF_DATASET overrides --dataset)");
    serve_cmd->add_option("--dataset", dataset_dir, "dataset directory");
    serve_cmd->add_option("--port", service.port, "listen port (0 = any)");
    serve_cmd->add_option("--host", service.host, "listen address");
    serve_cmd->add_option("--cors-origin", service.cors_origin, "Access-Control-Allow-Origin value");
    serve_cmd->add_option("--runs-dir", runs_dir, "also persist completed runs here");
    add_model_options(serve_cmd, model);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: kind=validation message=" << e.what() << "\n";
        return exit_validation;
    }

    try {
        if (*gen_cmd) {
            gen.jobs = jobs;
            generate_dataset(gen, gen_out);
            const auto dataset = Dataset::load(gen_out);
            std::cout << "subjects=" << dataset.size() << " digest=" << dataset.digest() << "\n";
        } else if (*predict_cmd) {
            const auto dataset = Dataset::load(dataset_dir);
            auto gateway = make_gateway(model, dataset);
            std::vector<PredictRequest> reqs;
            for (const auto& r : dataset.records()) {
                const auto& s = dataset.subject(r.id);
                reqs.push_back({&s.volume, &s.segmap});
            }
            const auto preds = gateway->predict(reqs);
            auto records = dataset.records();
            std::size_t positives = 0;
            for (std::size_t i = 0; i < records.size(); ++i) {
                records[i].predicted_label = preds[i].label;
                records[i].probability = preds[i].probability;
                positives += preds[i].label == 1;
            }
            write_demographics(dataset.dir(), dataset.manifest(), records);
            std::cout << "model=" << gateway->model_id() << " subjects=" << records.size() << " label1=" << positives << "\n";
        } else if (*subset_cmd) {
            const auto dataset = Dataset::load(dataset_dir);
            const auto& vars = dataset.manifest().variables;
            std::vector<FilterClause> clauses;
            for (const auto& c : by) clauses.push_back(parse_clause(c, vars));
            const auto state = apply_filters(dataset.records(), clauses, vars);
            std::string text;
            std::size_t n = 0;
            for (const auto& id : subset_ids(state)) {
                if (label >= 0 && dataset.record(id).predicted_label != label) continue;
                if (limit && n == limit) break;
                text += id + "\n";
                ++n;
            }
            emit(text, out_path);
        } else if (*recombine_cmd) {
            const auto dataset = Dataset::load(dataset_dir);
            if (fs::exists(run_out)) throw IoError("run directory already exists: " + run_out);
            auto gateway = make_gateway(model, dataset);
            const auto art = run(dataset, read_id_file(targets_file), read_id_file(sources_file),
                                 parse_segments(segments, dataset.schema()), *gateway, {jobs, store_volumes});
            write_run(art, run_out);
            std::cout << "run_id=" << art.run_id << " results=" << art.results.size() << " skipped=" << art.skipped_count()
                      << "\n";
        } else if (*summarize_cmd) {
            const auto art = read_run(run_dir);
            std::vector<SummaryRow> rows;
            if (by_clause.empty()) {
                rows = summarize(art);
            } else {
                const auto dataset = run_dataset(art, dataset_dir);
                const auto clause = parse_clause(by_clause, dataset.manifest().variables);
                rows = subgroup_summarize(art, clause, dataset.records(), dataset.manifest().variables);
            }
            emit(summary_csv(rows, art.schema), out_path);
        } else if (*eval_cmd) {
            const auto art = read_run(run_dir);
            const auto dataset = run_dataset(art, dataset_dir);
            std::vector<std::size_t> pool;
            for (std::size_t i = 0; i < art.results.size(); ++i) {
                if (!art.results[i].skipped) pool.push_back(i);
            }
            if (sample < 1 || sample > pool.size()) {
                throw ValidationError("--sample must be in 1.." + std::to_string(pool.size()));
            }
            Rng rng(seed, 0);
            for (std::size_t i = 0; i < sample; ++i) {
                const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                        static_cast<std::int64_t>(pool.size() - 1)));
                std::swap(pool[i], pool[j]);
            }
            const auto bands = synthetic::constants_from_manifest(dataset.manifest()).bands;
            const Segmenter segmenter = [&bands](const Volume& v) { return synthetic::segment(v, bands); };
            std::vector<FidelityReport> reports;
            for (std::size_t i = 0; i < sample; ++i) {
                reports.push_back(evaluate(recompute(dataset, art.results[pool[i]].spec), segmenter, dataset.schema()));
            }
            emit(fidelity_csv(aggregate(reports, dataset.schema()), dataset.schema()), out_path);
        } else if (*serve_cmd) {
            dataset_dir = dataset_from_env(dataset_dir);
            if (dataset_dir.empty()) throw ValidationError("serve needs --dataset or MORPHCF_DATASET");
            auto dataset = std::make_shared<const Dataset>(Dataset::load(dataset_dir));
            service.jobs = jobs;
            if (!runs_dir.empty()) service.runs_dir = runs_dir;
            Service server(dataset, make_gateway(model, *dataset), service);
            const int port = server.bind();
            std::cout << "listening on http://" << service.host << ":" << port << " digest=" << dataset->digest() << std::endl;
            server.listen();
        }
    } catch (const Error& e) {
        const char* kind = e.kind() == ErrorKind::validation ? "validation" : e.kind() == ErrorKind::io ? "io" : "transport";
        std::cerr << "error: kind=" << kind << " message=" << e.what() << "\n";
        return e.kind() == ErrorKind::validation ? exit_validation : e.kind() == ErrorKind::io ? exit_io : exit_transport;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: kind=io message=" << e.what() << "\n";
        return exit_io;
    }
    return 0;
}
