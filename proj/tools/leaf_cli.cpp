#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "leaf/experiments.hpp"
#include "leaf/verify.hpp"

namespace {

namespace fs = std::filesystem;
using namespace leaf;

constexpr int kExitBadConfig = 2;
constexpr int kExitNumeric = 3;

std::string default_out_root() {
  const char* env = std::getenv("LEAF_OUT");
  return env != nullptr && *env != '\0' ? env : "out";
}

void print_suite(const SuiteResult& suite) {
  for (const auto& c : suite.checks) {
    std::printf("[%s] %-55s observed=%-12.3g bound=%g\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.observed, c.bound);
  }
  std::printf("%s in %.2f s\n", suite.pass ? "all checks passed" : "CHECKS FAILED",
              suite.seconds);
}

int cmd_run(const std::string& config_path, const RunConfig& overrides,
            const std::vector<std::string>& given, const std::string& out_root) {
  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
    // apply explicit flag overrides on top of the file
    for (const auto& key : given) {
      if (key == "method") cfg.method = overrides.method;
      else if (key == "seed") cfg.seed = overrides.seed;
      else if (key == "epochs") cfg.epochs = overrides.epochs;
      else if (key == "lambda") cfg.lambda = overrides.lambda;
      else if (key == "lr") cfg.lr = overrides.lr;
      else if (key == "labels") cfg.n_labeled = overrides.n_labeled;
      else if (key == "expert_kind") cfg.expert_kind = overrides.expert_kind;
      else if (key == "num_experts") cfg.num_experts = overrides.num_experts;
      else if (key == "top_k") cfg.top_k = overrides.top_k;
    }
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitBadConfig;
  }

  if (cfg.method == Method::supervised_only && cfg.lambda != 0.0 &&
      std::find(given.begin(), given.end(), "lambda") != given.end()) {
    std::cerr << "warning: lambda has no effect with method=supervised_only\n";
  }

  try {
    RunOutput out = run_experiment(cfg, out_root);
    std::printf("run %s: overall_acc=%.4f balanced_acc=%.4f (%zu steps)\n", out.run_id.c_str(),
                out.result.final_test.overall_acc, out.result.final_test.balanced_acc,
                out.result.steps.size());
    std::printf("artifacts: %s\n", out.dir.c_str());
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_report(const std::string& root) {
  // aggregate every summary.csv below the output root
  struct Key {
    std::string method;
    int labels;
    bool operator<(const Key& o) const {
      return method != o.method ? method < o.method : labels < o.labels;
    }
  };
  std::map<Key, std::vector<std::pair<double, double>>> rows;  // (overall, balanced)
  if (!fs::exists(root)) {
    std::cerr << "report: no such directory " << root << "\n";
    return 1;
  }
  int checkpoints_ok = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "checkpoint") {
      try {
        read_checkpoint_index(entry.path().string());
        ++checkpoints_ok;
      } catch (const std::exception& e) {
        std::cerr << "report: unreadable checkpoint " << entry.path() << ": " << e.what() << "\n";
      }
      continue;
    }
    if (!entry.is_regular_file() || entry.path().filename() != "summary.csv") continue;
    std::ifstream is(entry.path());
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string method, seed, labels, overall, balanced;
      std::getline(ss, method, ',');
      std::getline(ss, seed, ',');
      std::getline(ss, labels, ',');
      std::getline(ss, overall, ',');
      std::getline(ss, balanced, ',');
      try {
        rows[{method, std::stoi(labels)}].emplace_back(std::stod(overall), std::stod(balanced));
      } catch (const std::exception&) {
        std::cerr << "report: skipping malformed row in " << entry.path() << "\n";
      }
    }
  }
  std::printf("method,n_labeled,runs,mean_overall_acc,mean_balanced_acc\n");
  for (const auto& [key, vals] : rows) {
    double so = 0.0, sb = 0.0;
    for (const auto& [o, b] : vals) {
      so += o;
      sb += b;
    }
    std::printf("%s,%d,%zu,%.6f,%.6f\n", key.method.c_str(), key.labels, vals.size(),
                so / vals.size(), sb / vals.size());
  }
  std::fprintf(stderr, "report: %d checkpoint(s) verified readable\n", checkpoints_ok);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical decouple-and-fuse semi-supervised learning engine"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string out_root = default_out_root();
  app.add_option("--out", out_root, "output root directory (overrides LEAF_OUT)");

  // run
  auto* run = app.add_subcommand("run", "train one configuration and persist its artifacts");
  std::string config_path;
  RunConfig overrides;
  std::string method_str = "leaf", kind_str = "residual";
  run->add_option("--config", config_path, "key=value config file");
  auto* o_method = run->add_option("--method", method_str, "leaf|supervised_only|fixed_threshold");
  auto* o_seed = run->add_option("--seed", overrides.seed, "master seed");
  auto* o_epochs = run->add_option("--epochs", overrides.epochs, "training epochs");
  auto* o_lambda = run->add_option("--lambda", overrides.lambda, "unsupervised loss weight");
  auto* o_lr = run->add_option("--lr", overrides.lr, "learning rate");
  auto* o_labels = run->add_option("--labels", overrides.n_labeled, "labeled sample count");
  auto* o_kind = run->add_option("--expert-kind", kind_str, "linear|bottleneck|residual");
  auto* o_experts = run->add_option("--num-experts", overrides.num_experts, "experts per bank");
  auto* o_topk = run->add_option("--top-k", overrides.top_k, "surviving experts per sample");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "label-count x method x seed grid");
  std::vector<int> sweep_labels{70, 140, 280};
  std::vector<std::string> sweep_methods{"leaf", "supervised_only", "fixed_threshold"};
  int sweep_seeds = 5;
  std::string sweep_config;
  sweep_cmd->add_option("--labels", sweep_labels, "labeled counts")->delimiter(',');
  sweep_cmd->add_option("--methods", sweep_methods, "methods to compare")->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds per cell");
  sweep_cmd->add_option("--config", sweep_config, "base config file");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "component-ablation variants under shared seeds");
  std::string ablate_config;
  int ablate_seeds = 5;
  ablate_cmd->add_option("--config", ablate_config, "base config file");
  ablate_cmd->add_option("--seeds", ablate_seeds, "seeds per variant");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference suite over all ops and losses");
  auto* oracle_cmd = app.add_subcommand("oracle", "brute-force partition and loss equivalence suites");

  auto* report_cmd = app.add_subcommand("report", "aggregate every summary.csv under a directory");
  std::string report_dir = default_out_root();
  report_cmd->add_option("--dir", report_dir, "directory to scan");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    std::vector<std::string> given;
    try {
      if (o_method->count()) {
        overrides.method = method_from_string(method_str);
        given.push_back("method");
      }
      if (o_kind->count()) {
        overrides.expert_kind = expert_kind_from_string(kind_str);
        given.push_back("expert_kind");
      }
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitBadConfig;
    }
    if (o_seed->count()) given.push_back("seed");
    if (o_epochs->count()) given.push_back("epochs");
    if (o_lambda->count()) given.push_back("lambda");
    if (o_lr->count()) given.push_back("lr");
    if (o_labels->count()) given.push_back("labels");
    if (o_experts->count()) given.push_back("num_experts");
    if (o_topk->count()) given.push_back("top_k");
    return cmd_run(config_path, overrides, given, out_root);
  }

  if (sweep_cmd->parsed()) {
    try {
      RunConfig base;
      if (!sweep_config.empty()) base = RunConfig::load(sweep_config);
      std::vector<Method> methods;
      for (const auto& m : sweep_methods) methods.push_back(method_from_string(m));
      const auto cells = sweep(base, sweep_labels, methods, sweep_seeds, out_root);
      const std::string csv = sweep_csv(cells);
      fs::create_directories(out_root);
      std::ofstream((fs::path(out_root) / "sweep.csv")) << csv;
      std::fputs(csv.c_str(), stdout);
      return 0;
    } catch (const NumericError& e) {
      std::cerr << "numeric abort: " << e.what() << "\n";
      return kExitNumeric;
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitBadConfig;
    }
  }

  if (ablate_cmd->parsed()) {
    try {
      RunConfig base;
      if (!ablate_config.empty()) base = RunConfig::load(ablate_config);
      const auto rows = ablate(base, ablate_seeds);
      const std::string csv = ablation_csv(rows);
      fs::create_directories(out_root);
      std::ofstream((fs::path(out_root) / "ablation.csv")) << csv;
      std::fputs(csv.c_str(), stdout);
      return 0;
    } catch (const NumericError& e) {
      std::cerr << "numeric abort: " << e.what() << "\n";
      return kExitNumeric;
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitBadConfig;
    }
  }

  if (gradcheck_cmd->parsed()) {
    const SuiteResult suite = gradcheck_suite();
    print_suite(suite);
    return suite.pass ? 0 : 1;
  }

  if (oracle_cmd->parsed()) {
    const SuiteResult suite = oracle_suite();
    print_suite(suite);
    return suite.pass ? 0 : 1;
  }

  if (report_cmd->parsed()) return cmd_report(report_dir);
  return 0;
}
