#include "leaf/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "leaf/rng.hpp"

namespace leaf {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  return out;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + s + "' for " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Method method_from_string(const std::string& s) {
  if (s == "leaf") return Method::leaf;
  if (s == "supervised_only") return Method::supervised_only;
  if (s == "fixed_threshold") return Method::fixed_threshold;
  throw std::invalid_argument("unknown method '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::leaf: return "leaf";
    case Method::supervised_only: return "supervised_only";
    default: return "fixed_threshold";
  }
}

namespace {

ConsistencyMode consistency_from_string(const std::string& s) {
  if (s == "ambiguous") return ConsistencyMode::ambiguous;
  if (s == "cross_entropy") return ConsistencyMode::cross_entropy;
  if (s == "none") return ConsistencyMode::none;
  throw std::invalid_argument("unknown consistency mode '" + s + "'");
}

std::string to_string(ConsistencyMode m) {
  switch (m) {
    case ConsistencyMode::ambiguous: return "ambiguous";
    case ConsistencyMode::cross_entropy: return "cross_entropy";
    default: return "none";
  }
}

}  // namespace

void RunConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_labeled < 1 || batch_unlabeled < 1) {
    throw std::invalid_argument("config: batch sizes must be >= 1");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("config: lambda must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (num_experts < 1) throw std::invalid_argument("config: num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) {
    throw std::invalid_argument("config: top_k must lie in [1, num_experts]");
  }
  if (bottleneck_ratio < 1) throw std::invalid_argument("config: bottleneck_ratio must be >= 1");
  if (!(threshold_T > 0.0 && threshold_T < 1.0)) {
    throw std::invalid_argument("config: threshold_T must lie in (0, 1)");
  }
  if (!(margin_eps >= 0.0)) throw std::invalid_argument("config: margin_eps must be >= 0");
  if (!(pseudo_threshold >= 0.0)) {
    throw std::invalid_argument("config: pseudo_threshold must be >= 0");
  }
  if (feature_dim < 1) throw std::invalid_argument("config: feature_dim must be >= 1");
  for (int w : encoder_hidden) {
    if (w < 1) throw std::invalid_argument("config: encoder widths must be >= 1");
  }
  data.validate();
  if (n_labeled < data.num_classes) {
    throw std::invalid_argument("config: n_labeled must be >= the class count");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "method=" << leaf::to_string(method) << '\n';
  os << "seed=" << seed << '\n';
  os << "epochs=" << epochs << '\n';
  os << "batch_labeled=" << batch_labeled << '\n';
  os << "batch_unlabeled=" << batch_unlabeled << '\n';
  os << "lambda=" << fmt_double(lambda) << '\n';
  os << "lr=" << fmt_double(lr) << '\n';
  os << "expert_kind=" << leaf::to_string(expert_kind) << '\n';
  os << "num_experts=" << num_experts << '\n';
  os << "top_k=" << top_k << '\n';
  os << "bottleneck_ratio=" << bottleneck_ratio << '\n';
  os << "use_semantic_eaf=" << (use_semantic_eaf ? "true" : "false") << '\n';
  os << "use_instance_eaf=" << (use_instance_eaf ? "true" : "false") << '\n';
  os << "consistency=" << to_string(consistency) << '\n';
  os << "threshold_T=" << fmt_double(threshold_T) << '\n';
  os << "margin_eps=" << fmt_double(margin_eps) << '\n';
  os << "partition_source=" << (partition_source == PartitionSource::strong ? "strong" : "weak")
     << '\n';
  os << "loss_scores=" << (loss_scores == LossScores::probs ? "probs" : "logits") << '\n';
  os << "pseudo_threshold=" << fmt_double(pseudo_threshold) << '\n';
  os << "augment_labeled=" << (augment_labeled ? "true" : "false") << '\n';
  os << "encoder_hidden=" << fmt_int_list(encoder_hidden) << '\n';
  os << "feature_dim=" << feature_dim << '\n';
  os << "data_classes=" << data.num_classes << '\n';
  os << "data_dim=" << data.dim << '\n';
  os << "data_counts=" << fmt_int_list(data.per_class_counts) << '\n';
  os << "data_separation=" << fmt_double(data.cluster_separation) << '\n';
  os << "data_noise_sigma=" << fmt_double(data.noise_sigma) << '\n';
  os << "data_seed=" << data.seed << '\n';
  os << "n_labeled=" << n_labeled << '\n';
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key=value at line " + std::to_string(line_no));
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "method") cfg.method = method_from_string(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "epochs") cfg.epochs = std::stoi(val);
      else if (key == "batch_labeled") cfg.batch_labeled = std::stoi(val);
      else if (key == "batch_unlabeled") cfg.batch_unlabeled = std::stoi(val);
      else if (key == "lambda") cfg.lambda = std::stod(val);
      else if (key == "lr") cfg.lr = std::stod(val);
      else if (key == "expert_kind") cfg.expert_kind = expert_kind_from_string(val);
      else if (key == "num_experts") cfg.num_experts = std::stoi(val);
      else if (key == "top_k") cfg.top_k = std::stoi(val);
      else if (key == "bottleneck_ratio") cfg.bottleneck_ratio = std::stoi(val);
      else if (key == "use_semantic_eaf") cfg.use_semantic_eaf = parse_bool(val, key);
      else if (key == "use_instance_eaf") cfg.use_instance_eaf = parse_bool(val, key);
      else if (key == "consistency") cfg.consistency = consistency_from_string(val);
      else if (key == "threshold_T") cfg.threshold_T = std::stod(val);
      else if (key == "margin_eps") cfg.margin_eps = std::stod(val);
      else if (key == "partition_source") {
        if (val == "strong") cfg.partition_source = PartitionSource::strong;
        else if (val == "weak") cfg.partition_source = PartitionSource::weak;
        else throw std::invalid_argument("bad partition_source '" + val + "'");
      } else if (key == "loss_scores") {
        if (val == "probs") cfg.loss_scores = LossScores::probs;
        else if (val == "logits") cfg.loss_scores = LossScores::logits;
        else throw std::invalid_argument("bad loss_scores '" + val + "'");
      } else if (key == "pseudo_threshold") cfg.pseudo_threshold = std::stod(val);
      else if (key == "augment_labeled") cfg.augment_labeled = parse_bool(val, key);
      else if (key == "encoder_hidden") cfg.encoder_hidden = parse_int_list(val);
      else if (key == "feature_dim") cfg.feature_dim = std::stoi(val);
      else if (key == "data_classes") cfg.data.num_classes = std::stoi(val);
      else if (key == "data_dim") cfg.data.dim = std::stoi(val);
      else if (key == "data_counts") cfg.data.per_class_counts = parse_int_list(val);
      else if (key == "data_separation") cfg.data.cluster_separation = std::stod(val);
      else if (key == "data_noise_sigma") cfg.data.noise_sigma = std::stod(val);
      else if (key == "data_seed") cfg.data.seed = std::stoull(val);
      else if (key == "n_labeled") cfg.n_labeled = std::stoi(val);
      else throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value '" + val + "' for key '" + key + "'");
    }
  }
  return cfg;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("config: cannot open " + path + " for writing");
  os << to_text();
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_text(buf.str());
}

std::string RunConfig::run_id() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t RunConfig::effective_data_seed() const {
  return data.seed != 0 ? data.seed : Rng::derive(seed, 10);
}

std::uint64_t RunConfig::effective_split_seed() const {
  return Rng::derive(effective_data_seed(), 11);
}

}  // namespace leaf
