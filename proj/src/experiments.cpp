#include "leaf/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace leaf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << content;
}

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

}  // namespace

RunOutput run_experiment(const RunConfig& cfg, const std::string& out_root) {
  cfg.validate();
  SyntheticSpec spec = cfg.data;
  spec.seed = cfg.effective_data_seed();
  const Dataset ds = generate(spec);
  const SslSplit split = split_dataset(ds, cfg.n_labeled, cfg.effective_split_seed());

  RunOutput out{cfg, train(cfg, split), cfg.run_id(), ""};

  if (!out_root.empty()) {
    const fs::path dir = fs::path(out_root) / out.run_id;
    fs::create_directories(dir);
    write_file(dir / "config", cfg.to_text());
    write_file(dir / "metrics.jsonl", metrics_jsonl(out.result));
    write_file(dir / "summary.csv", summary_csv_header() + summary_csv_row(cfg, out.result));
    save_checkpoint((dir / "checkpoint").string(), out.result.model.named_parameters());
    out.dir = dir.string();
  }
  return out;
}

std::string metrics_jsonl(const TrainResult& result) {
  std::string out;
  std::size_t next_epoch_line = 0;
  for (const auto& s : result.steps) {
    // epoch summaries interleave after the last step of their epoch
    while (next_epoch_line < result.epochs.size() &&
           result.epochs[next_epoch_line].epoch < s.epoch) {
      const auto& e = result.epochs[next_epoch_line++];
      out += json{{"type", "epoch"},
                  {"epoch", e.epoch},
                  {"overall_acc", e.overall_acc},
                  {"balanced_acc", e.balanced_acc}}
                 .dump();
      out += '\n';
    }
    out += json{{"type", "step"},
                {"epoch", s.epoch},
                {"step", s.step},
                {"loss_sup", s.loss_sup},
                {"loss_unsup", s.loss_unsup},
                {"loss_total", s.loss_total},
                {"frac_confident", s.frac_confident},
                {"mean_m", s.mean_m}}
               .dump();
    out += '\n';
  }
  for (; next_epoch_line < result.epochs.size(); ++next_epoch_line) {
    const auto& e = result.epochs[next_epoch_line];
    out += json{{"type", "epoch"},
                {"epoch", e.epoch},
                {"overall_acc", e.overall_acc},
                {"balanced_acc", e.balanced_acc}}
               .dump();
    out += '\n';
  }
  return out;
}

std::string summary_csv_header() {
  return "method,seed,n_labeled,overall_acc,balanced_acc\n";
}

std::string summary_csv_row(const RunConfig& cfg, const TrainResult& result) {
  return to_string(cfg.method) + "," + std::to_string(cfg.seed) + "," +
         std::to_string(cfg.n_labeled) + "," + fmt6(result.final_test.overall_acc) + "," +
         fmt6(result.final_test.balanced_acc) + "\n";
}

std::vector<SweepCell> sweep(const RunConfig& base, const std::vector<int>& label_counts,
                             const std::vector<Method>& methods, int num_seeds,
                             const std::string& out_root) {
  if (label_counts.empty() || methods.empty() || num_seeds < 1) {
    throw std::invalid_argument("sweep: empty grid");
  }
  std::vector<SweepCell> cells;
  for (int labels : label_counts) {
    for (Method method : methods) {
      SweepCell cell;
      cell.method = to_string(method);
      cell.n_labeled = labels;
      std::vector<double> balanced, overall;
      for (int s = 0; s < num_seeds; ++s) {
        RunConfig cfg = base;
        cfg.method = method;
        cfg.n_labeled = labels;
        cfg.seed = base.seed + static_cast<std::uint64_t>(s);
        try {
          RunOutput run = run_experiment(cfg, out_root);
          balanced.push_back(run.result.final_test.balanced_acc);
          overall.push_back(run.result.final_test.overall_acc);
          ++cell.ok_runs;
        } catch (const std::exception&) {
          ++cell.failed_runs;
        }
      }
      const Moments mb = moments(balanced);
      cell.mean_balanced = mb.mean;
      cell.std_balanced = mb.stddev;
      cell.mean_overall = moments(overall).mean;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "n_labeled,method,runs,failed,mean_balanced_acc,std_balanced_acc,mean_overall_acc\n";
  for (const auto& c : cells) {
    out += std::to_string(c.n_labeled) + "," + c.method + "," + std::to_string(c.ok_runs) + "," +
           std::to_string(c.failed_runs) + "," + fmt6(c.mean_balanced) + "," +
           fmt6(c.std_balanced) + "," + fmt6(c.mean_overall) + "\n";
  }
  return out;
}

std::vector<std::string> ablation_variant_names() {
  return {"full", "no_semantic_eaf", "no_instance_eaf", "no_category_eaf", "hard_label_ce"};
}

RunConfig apply_ablation_variant(const RunConfig& base, const std::string& variant) {
  RunConfig cfg = base;
  cfg.method = Method::leaf;
  if (variant == "full") {
    // base wiring as-is
  } else if (variant == "no_semantic_eaf") {
    cfg.use_semantic_eaf = false;
  } else if (variant == "no_instance_eaf") {
    cfg.use_instance_eaf = false;
  } else if (variant == "no_category_eaf") {
    cfg.consistency = ConsistencyMode::none;
  } else if (variant == "hard_label_ce") {
    cfg.consistency = ConsistencyMode::cross_entropy;
  } else {
    throw std::invalid_argument("unknown ablation variant '" + variant + "'");
  }
  return cfg;
}

std::vector<AblationRow> ablate(const RunConfig& base, int num_seeds) {
  if (num_seeds < 1) throw std::invalid_argument("ablate: need at least one seed");
  std::vector<AblationRow> rows;
  for (const std::string& variant : ablation_variant_names()) {
    AblationRow row;
    row.variant = variant;
    std::vector<double> balanced, overall;
    for (int s = 0; s < num_seeds; ++s) {
      RunConfig cfg = apply_ablation_variant(base, variant);
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      try {
        RunOutput run = run_experiment(cfg);
        balanced.push_back(run.result.final_test.balanced_acc);
        overall.push_back(run.result.final_test.overall_acc);
        ++row.ok_runs;
      } catch (const std::exception&) {
        ++row.failed_runs;
      }
    }
    const Moments mb = moments(balanced);
    row.mean_balanced = mb.mean;
    row.std_balanced = mb.stddev;
    row.mean_overall = moments(overall).mean;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,runs,failed,mean_balanced_acc,std_balanced_acc,mean_overall_acc\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.ok_runs) + "," + std::to_string(r.failed_runs) +
           "," + fmt6(r.mean_balanced) + "," + fmt6(r.std_balanced) + "," +
           fmt6(r.mean_overall) + "\n";
  }
  return out;
}

}  // namespace leaf
