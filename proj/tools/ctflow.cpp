// ctflow command line: register datasets, run pipelines, benchmark the loader
// and inspect report files.
//
// Exit codes: 0 ok, 1 validation, 2 runtime, 3 no triggers.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctflow/ctflow.hpp"

namespace fs = std::filesystem;
using namespace ctflow;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kNoTriggers = 3;

int exit_code(const Error& e) {
  switch (e.code()) {
    case Errc::validation:
    case Errc::invalid_argument:
    case Errc::parse: return kValidation;
    case Errc::no_triggers: return kNoTriggers;
    default: return kRuntime;
  }
}

void print_issues(const ConfigError& e) {
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& i : e.issues()) errors.push_back({{"path", i.path}, {"message", i.message}});
  std::cerr << nlohmann::json{{"status", "validation_error"}, {"errors", errors}}.dump(1) << '\n';
}

struct RegisterArgs {
  std::vector<std::string> files;
  std::string manifest = "dataset.json";
  std::string wrapper = "binary_fixed_record";
  std::uint32_t record_bytes = 0;
  int label_column = 0;
  bool csv_header = false;
  std::int64_t label = -1;
  std::int64_t base_timestamp = 0;
};

int do_register(const RegisterArgs& a) {
  SampleStore store;
  if (fs::exists(a.manifest)) store.load_manifest(a.manifest);
  FileRecordSpec spec;
  spec.kind = wrapper_kind_from_string(a.wrapper);
  spec.record_bytes = a.record_bytes;
  spec.label_column = a.label_column;
  spec.csv_header = a.csv_header;
  spec.label = a.label;
  std::size_t added = 0;
  for (const auto& f : a.files) added += store.register_file(f, spec, a.base_timestamp).size();
  store.save_manifest(a.manifest);
  std::cout << "registered " << added << " samples; " << store.size() << " in " << a.manifest << '\n';
  return kOk;
}

struct RunArgs {
  std::string config;
  std::string dataset;
  std::string out = "reports";
  bool keep_models = false;
};

int do_run(const RunArgs& a) {
  auto cfg = load_config(a.config);
  if (!a.dataset.empty()) cfg.data.dataset = a.dataset;
  if (cfg.data.dataset.empty()) throw ConfigError("data.dataset_id", "no dataset given");
  fs::path manifest = cfg.data.dataset;
  if (manifest.is_relative() && !fs::exists(manifest)) manifest = fs::path(a.config).parent_path() / manifest;

  SampleStore store;
  store.load_manifest(manifest);
  const auto split = store.split_stream(cfg.data.eval_fraction, cfg.data.split, derive_seed(cfg.seed, "split"));
  RunOptions options;
  if (a.keep_models) options.model_dir = fs::path(a.out) / "models";
  const auto run = run_pipeline(cfg, store, split.train, options);
  if (run.models.empty()) {
    write_reports(a.out, run, nullptr);
    std::cerr << "no_triggers: the pipeline never triggered; no matrix was produced\n";
    return kNoTriggers;
  }
  const auto eval = EvalSet::from_store(store, split.eval, cfg.feature_dim);
  const auto evaluation = evaluate_run(run, eval);
  write_reports(a.out, run, &evaluation);
  std::cout << "triggers " << run.costs.num_triggers << ", samples trained " << run.costs.samples_trained
            << ", reports in " << a.out << '\n';
  return kOk;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  if (out.empty()) throw Error(Errc::invalid_argument, "empty list '" + s + "'");
  return out;
}

struct BenchArgs {
  std::string dataset;
  std::string workers = "1";
  std::string prefetch = "0,1";
  std::string requests = "1";
  std::string storage_threads = "1";
  std::string partition_sizes = "100000";
  std::size_t repetitions = 3;
  std::size_t batch_size = 1024;
  double subset = 1.0;
  bool warm = false;
  bool no_train = false;
  bool sequential = false;
  std::string out;
};

int do_bench(const BenchArgs& a) {
  SampleStore store;
  store.load_manifest(a.dataset);
  BenchOptions opts;
  opts.repetitions = a.repetitions;
  opts.batch_size = a.batch_size;
  opts.cold_cache = !a.warm;
  opts.train = !a.no_train;
  std::vector<std::uint64_t> keys = store.keys_in_stream_order();
  if (a.subset < 1.0) {
    std::vector<PoolEntry> pool;
    for (auto k : keys) pool.push_back({k, store.entry(k).timestamp, store.entry(k).label, 0});
    keys.clear();
    for (const auto& wk : presample(pool, Presampling::uniform, a.subset, 0)) keys.push_back(wk.key);
  }
  std::string csv = bench_csv_header();
  for (auto ps : parse_list(a.partition_sizes))
    for (auto st : parse_list(a.storage_threads))
      for (auto w : parse_list(a.workers))
        for (auto p : parse_list(a.prefetch))
          for (auto r : parse_list(a.requests)) {
            LoaderConfig cfg{w, p, r, st, SampleStore::kDefaultBufferBytes};
            const auto row = bench_csv_row(bench_keyed(store, keys, cfg, ps, opts));
            std::cout << row << std::flush;
            csv += row;
          }
  if (a.sequential)
    for (auto w : parse_list(a.workers)) {
      const auto row = bench_csv_row(bench_sequential(store, w, opts));
      std::cout << row << std::flush;
      csv += row;
    }
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    f << csv;
    if (!f) throw Error(Errc::io, "cannot write " + a.out);
  }
  return kOk;
}

int do_check(const std::string& dir) {
  const auto problems = check_reports(dir);
  for (const auto& p : problems) std::cerr << p << '\n';
  if (!problems.empty()) return kValidation;
  std::cout << "ok\n";
  return kOk;
}

struct CompareArgs {
  std::vector<std::string> runs;
  std::string metric = "accuracy";
  std::string variant = "currently_active";
  std::string cost = "num_triggers";
  std::string out;
};

int do_compare(const CompareArgs& a) {
  std::vector<fs::path> dirs(a.runs.begin(), a.runs.end());
  const auto variant = a.variant == "currently_trained" ? CompositeVariant::currently_trained : CompositeVariant::currently_active;
  if (a.variant != "currently_active" && a.variant != "currently_trained")
    throw Error(Errc::invalid_argument, "unknown variant '" + a.variant + "'");
  const auto points = compare_runs(dirs, a.metric, variant, cost_kind_from_string(a.cost));
  std::string csv = "pipeline,score,cost,pareto\n";
  for (const auto& p : points)
    csv += p.pipeline + "," + format_double(p.score) + "," + format_double(p.cost) + "," + (p.pareto ? "1" : "0") + "\n";
  std::cout << csv;
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    f << csv;
    if (!f) throw Error(Errc::io, "cannot write " + a.out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctflow: continual training pipelines over sample streams"};
  app.require_subcommand(1);

  RegisterArgs reg;
  auto* reg_cmd = app.add_subcommand("register", "Register data files into a dataset manifest");
  reg_cmd->add_option("files", reg.files, "Data files")->required();
  reg_cmd->add_option("--manifest", reg.manifest, "Manifest to create or extend");
  reg_cmd->add_option("--wrapper", reg.wrapper, "binary_fixed_record | csv | single_sample");
  reg_cmd->add_option("--record-bytes", reg.record_bytes, "Binary record size (0: take from header)");
  reg_cmd->add_option("--label-column", reg.label_column, "CSV label column");
  reg_cmd->add_flag("--csv-header", reg.csv_header, "CSV files start with a header row");
  reg_cmd->add_option("--label", reg.label, "Label of single-sample files");
  reg_cmd->add_option("--timestamp", reg.base_timestamp, "Timestamp assigned to the files");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a pipeline in experiment mode and write reports");
  run_cmd->add_option("--config", run.config, "Pipeline document (YAML)")->required();
  run_cmd->add_option("--dataset", run.dataset, "Dataset manifest (overrides data.dataset_id)");
  run_cmd->add_option("--out", run.out, "Report directory");
  run_cmd->add_flag("--keep-models", run.keep_models, "Persist model artifacts under <out>/models");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Training-loop throughput sweep");
  bench_cmd->add_option("--dataset", bench.dataset, "Dataset manifest")->required();
  bench_cmd->add_option("--workers", bench.workers, "Comma-separated worker counts");
  bench_cmd->add_option("--prefetch", bench.prefetch, "Comma-separated prefetched partitions");
  bench_cmd->add_option("--requests", bench.requests, "Comma-separated parallel prefetch requests");
  bench_cmd->add_option("--storage-threads", bench.storage_threads, "Comma-separated storage thread counts");
  bench_cmd->add_option("--partition-size", bench.partition_sizes, "Comma-separated partition sizes");
  bench_cmd->add_option("--repetitions", bench.repetitions, "Repetitions per configuration");
  bench_cmd->add_option("--batch-size", bench.batch_size, "Training batch size");
  bench_cmd->add_option("--subset", bench.subset, "Uniformly presampled fraction of the keys");
  bench_cmd->add_flag("--warm", bench.warm, "Keep the page cache between repetitions");
  bench_cmd->add_flag("--no-train", bench.no_train, "Decode batches without SGD steps");
  bench_cmd->add_flag("--sequential", bench.sequential, "Add sequential-file baseline rows");
  bench_cmd->add_option("--out", bench.out, "CSV output path");

  std::string check_dir;
  auto* report_cmd = app.add_subcommand("report", "Report utilities");
  report_cmd->require_subcommand(1);
  auto* check_cmd = report_cmd->add_subcommand("check", "Validate the report files of a run");
  check_cmd->add_option("dir", check_dir, "Report directory")->required();

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Cost/accuracy feasible set across runs");
  cmp_cmd->add_option("runs", cmp.runs, "Report directories")->required();
  cmp_cmd->add_option("--metric", cmp.metric, "Metric id");
  cmp_cmd->add_option("--variant", cmp.variant, "currently_active | currently_trained");
  cmp_cmd->add_option("--cost", cmp.cost, "num_triggers | samples_trained | wall_clock_seconds");
  cmp_cmd->add_option("--out", cmp.out, "CSV output path");

  std::string dump_path;
  auto* config_cmd = app.add_subcommand("config", "Validate a pipeline document and print its normalized form");
  config_cmd->add_option("file", dump_path, "Pipeline document")->required();

  std::string gen_kind, gen_out;
  std::size_t gen_count = 0;
  std::uint64_t gen_seed = 0;
  auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic dataset");
  gen_cmd->add_option("kind", gen_kind, "gaussian | records")->required();
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--count", gen_count, "Number of samples");
  gen_cmd->add_option("--seed", gen_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*reg_cmd) return do_register(reg);
    if (*run_cmd) return do_run(run);
    if (*bench_cmd) return do_bench(bench);
    if (*check_cmd) return do_check(check_dir);
    if (*cmp_cmd) return do_compare(cmp);
    if (*config_cmd) {
      std::cout << dump_config(load_config(dump_path));
      return kOk;
    }
    if (*gen_cmd) {
      fs::path manifest;
      if (gen_kind == "gaussian") {
        GaussianStreamSpec spec;
        spec.seed = gen_seed;
        if (gen_count > 0) spec.num_samples = gen_count;
        manifest = write_stream(generate_gaussian_stream(spec), gen_out, "stream");
      } else if (gen_kind == "records") {
        manifest = write_record_dataset(gen_out, gen_count > 0 ? gen_count : 1000000, 160, 180000, gen_seed);
      } else {
        throw Error(Errc::invalid_argument, "unknown dataset kind '" + gen_kind + "'");
      }
      std::cout << manifest.string() << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    print_issues(e);
    return kValidation;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
