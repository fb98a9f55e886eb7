#include "leaf/model.hpp"

namespace leaf {

LeafModel LeafModel::init(const RunConfig& cfg, int input_dim, int num_classes, Rng& rng) {
  LeafModel model;
  model.input_dim = input_dim;
  model.num_classes = num_classes;
  model.use_semantic = cfg.use_semantic_eaf;
  model.use_instance = cfg.use_instance_eaf;

  // An empty hidden list with feature_dim == input_dim means the identity
  // encoder; otherwise the final width is always feature_dim.
  std::vector<int> widths = cfg.encoder_hidden;
  if (!(widths.empty() && cfg.feature_dim == input_dim)) widths.push_back(cfg.feature_dim);
  model.encoder = MlpEncoder::init(input_dim, widths, rng);
  model.feature_dim = model.encoder.output_dim;

  if (model.use_semantic) {
    model.semantic = ExpertBank::init(cfg.expert_kind, model.feature_dim, cfg.num_experts,
                                      cfg.top_k, cfg.bottleneck_ratio, rng);
  }
  model.classifier = LinearLayer::init(model.feature_dim, num_classes, rng);
  if (model.use_instance) {
    model.instance = ExpertBank::init(cfg.expert_kind, num_classes, cfg.num_experts, cfg.top_k,
                                      cfg.bottleneck_ratio, rng);
  }
  return model;
}

Tensor LeafModel::features(const Tensor& x) const {
  Tensor f = encoder.forward(x);
  return use_semantic ? fuse(f, semantic) : f;
}

Tensor LeafModel::logits(const Tensor& x) const {
  Tensor p = classifier.forward(features(x));
  return use_instance ? fuse(p, instance) : p;
}

namespace {

void push_bank(const std::string& prefix, const ExpertBank& bank,
               std::vector<std::pair<std::string, Tensor>>& out) {
  for (std::size_t j = 0; j < bank.experts.size(); ++j) {
    const auto& e = bank.experts[j];
    const std::string base = prefix + ".expert" + std::to_string(j);
    out.emplace_back(base + ".w1", e.first.weight);
    out.emplace_back(base + ".b1", e.first.bias);
    if (e.kind != ExpertKind::linear) {
      out.emplace_back(base + ".w2", e.second.weight);
      out.emplace_back(base + ".b2", e.second.bias);
    }
  }
  out.emplace_back(prefix + ".gate", bank.gate_weight);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> LeafModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < encoder.layers.size(); ++i) {
    out.emplace_back("encoder.l" + std::to_string(i) + ".w", encoder.layers[i].weight);
    out.emplace_back("encoder.l" + std::to_string(i) + ".b", encoder.layers[i].bias);
  }
  if (use_semantic) push_bank("semantic", semantic, out);
  out.emplace_back("classifier.w", classifier.weight);
  out.emplace_back("classifier.b", classifier.bias);
  if (use_instance) push_bank("instance", instance, out);
  return out;
}

std::vector<Tensor> LeafModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

namespace {

void push_bank_slots(ExpertBank& bank, std::vector<Tensor*>& out) {
  for (auto& e : bank.experts) {
    out.push_back(&e.first.weight);
    out.push_back(&e.first.bias);
    if (e.kind != ExpertKind::linear) {
      out.push_back(&e.second.weight);
      out.push_back(&e.second.bias);
    }
  }
  out.push_back(&bank.gate_weight);
}

}  // namespace

std::vector<Tensor*> LeafModel::parameter_slots() {
  std::vector<Tensor*> out;
  for (auto& l : encoder.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  if (use_semantic) push_bank_slots(semantic, out);
  out.push_back(&classifier.weight);
  out.push_back(&classifier.bias);
  if (use_instance) push_bank_slots(instance, out);
  return out;
}

}  // namespace leaf
