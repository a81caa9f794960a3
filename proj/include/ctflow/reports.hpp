#ifndef CTFLOW_REPORTS_HPP
#define CTFLOW_REPORTS_HPP

// Report files of a pipeline run:
//   run.json                the run log, models, intervals and composite series
//   matrix_<metric>.csv     one row per model, one column per interval
//   composite_<variant>.csv one row per interval, one column per metric
//   score.json              pipeline scores and costs
// Every field whose name contains "wall" is a wall-clock measurement; all
// other content is a deterministic function of the config and the seed.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctflow/config.hpp"
#include "ctflow/core.hpp"
#include "ctflow/evaluator.hpp"
#include "ctflow/supervisor.hpp"

namespace ctflow {

using nlohmann::json;

namespace detail {

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string csv_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

/// Identifies what a run was evaluated on; runs are comparable only when equal.
inline std::string evaluation_key(const PipelineConfig& c) {
  const auto& iv = c.evaluation.intervals;
  return json{{"dataset", c.data.dataset},
              {"eval_fraction", c.data.eval_fraction},
              {"split", detail::name_of(c.data.split, detail::kSplitNames)},
              {"interval_kind", detail::name_of(iv.kind, detail::kIntervalNames)},
              {"length", iv.length},
              {"stride", iv.stride},
              {"anchor", detail::name_of(iv.anchor, detail::kAnchorNames)}}
      .dump();
}

inline json run_to_json(const PipelineRun& run, const RunEvaluation* eval) {
  json models = json::array();
  for (const auto& m : run.models)
    models.push_back({{"id", m.id}, {"t_start", m.t_start}, {"t_end", m.t_end}, {"training_set_size", m.training_set_size}});
  json triggers = json::array();
  for (const auto& t : run.log)
    triggers.push_back({{"trigger", t.trigger},
                        {"cause", t.cause},
                        {"sample_index", t.sample_index},
                        {"key", t.key},
                        {"timestamp", t.timestamp},
                        {"model", t.model ? json(*t.model) : json(nullptr)},
                        {"samples_trained", t.samples_trained},
                        {"wall_seconds", t.wall_seconds}});
  json doc{{"format", "ctflow-run"},
           {"version", 1},
           {"status", run.models.empty() ? "no_triggers" : "ok"},
           {"pipeline", run.config.pipeline_id},
           {"config", dump_config(run.config)},
           {"evaluation_key", evaluation_key(run.config)},
           {"models", models},
           {"triggers", triggers},
           {"costs",
            {{"num_triggers", run.costs.num_triggers},
             {"samples_trained", run.costs.samples_trained},
             {"wall_clock_seconds", run.costs.wall_clock_seconds}}},
           {"drift_scores", run.drift_scores}};
  json intervals = json::array();
  json series = json::object();
  if (eval) {
    for (const auto& iv : eval->intervals) intervals.push_back({{"start", iv.start}, {"anchor", iv.anchor}, {"end", iv.end}});
    for (const auto& m : eval->metrics) {
      json active = json::array(), trained = json::array();
      for (const auto& v : m.active) active.push_back(detail::optional_number(v));
      for (const auto& v : m.trained) trained.push_back(detail::optional_number(v));
      series[m.metric.id()] = {{"currently_active", active}, {"currently_trained", trained}};
    }
  }
  doc["intervals"] = intervals;
  doc["series"] = series;
  return doc;
}

inline std::string matrix_csv(const PipelineRun& run, const EvaluationMatrix& m) {
  std::string s = "model,t_start,t_end";
  for (std::size_t j = 0; j < m.cols; ++j) s += ",interval_" + std::to_string(j);
  s += "\n";
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto& rec = run.models[i];
    s += std::to_string(rec.id) + "," + std::to_string(rec.t_start) + "," + std::to_string(rec.t_end);
    for (std::size_t j = 0; j < m.cols; ++j) s += "," + detail::csv_cell(m.at(i, j));
    s += "\n";
  }
  return s;
}

inline std::string composite_csv(const RunEvaluation& eval, const CompositeMapping& mapping, CompositeVariant variant) {
  std::string s = "interval,start,anchor,end,model";
  for (const auto& m : eval.metrics) s += "," + m.metric.id();
  s += "\n";
  for (std::size_t j = 0; j < eval.intervals.size(); ++j) {
    const auto& iv = eval.intervals[j];
    s += std::to_string(j) + "," + std::to_string(iv.start) + "," + std::to_string(iv.anchor) + "," +
         std::to_string(iv.end) + "," + (mapping[j] ? std::to_string(*mapping[j]) : std::string());
    for (const auto& m : eval.metrics)
      s += "," + detail::csv_cell(variant == CompositeVariant::currently_active ? m.active[j] : m.trained[j]);
    s += "\n";
  }
  return s;
}

inline json score_json(const PipelineRun& run, const RunEvaluation* eval) {
  json scores = json::object();
  std::size_t cutoff = 0;
  if (eval) {
    cutoff = score_cutoff(run, eval->intervals);
    for (const auto& m : eval->metrics) {
      auto score = [&](const CompositeSeries& s) -> json {
        try {
          return pipeline_score(s, cutoff);
        } catch (const Error&) {
          return nullptr;
        }
      };
      scores[m.metric.id()] = {{"currently_active", score(m.active)}, {"currently_trained", score(m.trained)}};
    }
  }
  return {{"format", "ctflow-score"},
          {"version", 1},
          {"status", run.models.empty() ? "no_triggers" : "ok"},
          {"pipeline", run.config.pipeline_id},
          {"cutoff_interval", cutoff},
          {"scores", scores},
          {"costs",
           {{"num_triggers", run.costs.num_triggers},
            {"samples_trained", run.costs.samples_trained},
            {"wall_clock_seconds", run.costs.wall_clock_seconds}}}};
}

/// Writes all report files; a run without triggers gets run.json and
/// score.json only.
inline void write_reports(const std::filesystem::path& dir, const PipelineRun& run, const RunEvaluation* eval) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "run.json", run_to_json(run, eval).dump(1) + "\n");
  detail::write_text(dir / "score.json", score_json(run, eval).dump(1) + "\n");
  if (!eval) return;
  for (const auto& m : eval->metrics) detail::write_text(dir / ("matrix_" + m.metric.id() + ".csv"), matrix_csv(run, m.matrix));
  const auto ends = model_ends(run);
  for (auto variant : {CompositeVariant::currently_active, CompositeVariant::currently_trained}) {
    const auto mapping = composite_mapping(ends, eval->intervals, variant, run.config.evaluation.undefined_trained);
    detail::write_text(dir / ("composite_" + std::string(to_string(variant)) + ".csv"), composite_csv(*eval, mapping, variant));
  }
}

/// Drops every object member whose name contains "wall".
inline json strip_wall_clock(json j) {
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key().find("wall") == std::string::npos) out[it.key()] = strip_wall_clock(it.value());
    return out;
  }
  if (j.is_array())
    for (auto& v : j) v = strip_wall_clock(v);
  return j;
}

/// Validates every report file in `dir` against its schema. Returns the
/// problems found; empty means the reports are well-formed.
inline std::vector<std::string> check_reports(const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  auto problem = [&](std::string s) { problems.push_back(std::move(s)); };
  json run, score;
  try {
    run = detail::read_json(dir / "run.json");
    score = detail::read_json(dir / "score.json");
  } catch (const Error& e) {
    problem(e.what());
    return problems;
  }
  for (const char* key : {"format", "version", "status", "pipeline", "config", "models", "triggers", "costs", "intervals", "series"})
    if (!run.contains(key)) problem(std::string("run.json: missing '") + key + "'");
  for (const char* key : {"format", "version", "status", "pipeline", "scores", "costs"})
    if (!score.contains(key)) problem(std::string("score.json: missing '") + key + "'");
  if (!problems.empty()) return problems;
  if (run["format"] != "ctflow-run") problem("run.json: wrong format tag");
  if (score["format"] != "ctflow-score") problem("score.json: wrong format tag");
  try {
    parse_config_text(run["config"].get<std::string>());
  } catch (const Error& e) {
    problem(std::string("run.json: embedded config does not parse: ") + e.what());
  }
  if (run["costs"]["num_triggers"].get<std::size_t>() != run["models"].size())
    problem("run.json: num_triggers differs from the model count");
  if (run["status"] == "no_triggers") return problems;

  const auto num_models = run["models"].size();
  const auto num_intervals = run["intervals"].size();
  auto numeric = [](const std::string& s) {
    if (s.empty()) return true;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
  };
  for (auto it = run["series"].begin(); it != run["series"].end(); ++it) {
    const auto name = "matrix_" + it.key() + ".csv";
    try {
      const auto rows = detail::parse_csv(detail::read_text(dir / name));
      if (rows.size() != num_models + 1) problem(name + ": expected " + std::to_string(num_models) + " data rows");
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != num_intervals + 3) problem(name + ": row " + std::to_string(r) + " has the wrong column count");
        for (std::size_t c = 3; r > 0 && c < rows[r].size(); ++c)
          if (!numeric(rows[r][c])) problem(name + ": non-numeric cell in row " + std::to_string(r));
      }
    } catch (const Error& e) {
      problem(e.what());
    }
    for (const char* variant : {"currently_active", "currently_trained"})
      if (it.value()[variant].size() != num_intervals) problem("run.json: series " + it.key() + " has the wrong length");
  }
  for (const char* variant : {"currently_active", "currently_trained"}) {
    const auto name = std::string("composite_") + variant + ".csv";
    try {
      const auto rows = detail::parse_csv(detail::read_text(dir / name));
      if (rows.size() != num_intervals + 1) problem(name + ": expected " + std::to_string(num_intervals) + " data rows");
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) problem(name + ": row " + std::to_string(r) + " has the wrong column count");
        for (std::size_t c = 5; c < rows[r].size(); ++c)
          if (!numeric(rows[r][c])) problem(name + ": non-numeric cell in row " + std::to_string(r));
      }
    } catch (const Error& e) {
      problem(e.what());
    }
  }
  return problems;
}

/// Feasible set across report directories. With skip_policy
/// after_first_common_trigger the score is recomputed from the series using
/// the cutoff common to all runs.
inline std::vector<FeasiblePoint> compare_runs(const std::vector<std::filesystem::path>& dirs, const std::string& metric,
                                               CompositeVariant variant, CostKind cost) {
  if (dirs.empty()) throw Error(Errc::invalid_argument, "compare needs at least one run");
  std::vector<json> runs;
  for (const auto& d : dirs) runs.push_back(detail::read_json(d / "run.json"));
  std::vector<std::int64_t> firsts;
  for (const auto& r : runs) {
    if (r.at("status") != "ok") throw Error(Errc::no_triggers, "run '" + r.at("pipeline").get<std::string>() + "' has no models");
    firsts.push_back(r.at("models").front().at("t_end").get<std::int64_t>());
  }
  std::vector<FeasibleInput> inputs;
  for (const auto& r : runs) {
    const auto cfg = parse_config_text(r.at("config").get<std::string>());
    std::vector<EvaluationInterval> intervals;
    for (const auto& iv : r.at("intervals"))
      intervals.push_back({iv.at("start").get<std::int64_t>(), iv.at("anchor").get<std::int64_t>(), iv.at("end").get<std::int64_t>()});
    if (!r.at("series").contains(metric)) throw Error(Errc::validation, "run has no series for metric '" + metric + "'");
    CompositeSeries series;
    for (const auto& v : r.at("series").at(metric).at(to_string(variant)))
      series.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    const std::size_t cutoff =
        cfg.evaluation.skip == ScoreSkip::after_first_common_trigger ? first_common_trigger_cutoff(firsts, intervals) : 0;
    const auto& costs = r.at("costs");
    const double c = cost == CostKind::num_triggers      ? costs.at("num_triggers").get<double>()
                     : cost == CostKind::samples_trained ? costs.at("samples_trained").get<double>()
                                                         : costs.at("wall_clock_seconds").get<double>();
    inputs.push_back({r.at("pipeline").get<std::string>(), pipeline_score(series, cutoff), c,
                      r.at("evaluation_key").get<std::string>()});
  }
  return feasible_set(inputs);
}

}  // namespace ctflow

#endif  // CTFLOW_REPORTS_HPP
