#include "dce/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dce {
namespace {

using Json = nlohmann::ordered_json;

void reject_unknown(const Json& obj, const std::string& section, const std::set<std::string>& allowed) {
  require(obj.is_object(), ErrorKind::kValue, "config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    require(allowed.count(key) > 0, ErrorKind::kValue, "config: unknown key '" + section + "." + key + "'");
  }
}

template <class T>
void read(const Json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValue, "config: bad value for '" + section + "." + key + "': " + e.what());
  }
}

const char* order_name(CostNormOrder o) {
  return o == CostNormOrder::kNormalizeThenRelu ? "normalize_then_relu" : "relu_then_normalize";
}

const char* variant_name(BackboneVariant v) { return v == BackboneVariant::kToyTrainable ? "toy" : "fixed"; }

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const RunConfig& base) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kFormat, std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig rc = base;
  reject_unknown(root, "", {"model", "transforms", "train", "seeds"});

  if (root.contains("model")) {
    const Json& m = root["model"];
    reject_unknown(m, "model",
                   {"lnet_h", "lnet_w", "local_radius", "backbone", "backbone_channels", "decoder_channels",
                    "refinement_channels", "cyclic_consistency", "iterative_refinement", "refine_l2", "refine_l4",
                    "cost_norm_order"});
    auto& c = rc.model;
    read(m, "model", "lnet_h", c.lnet_h);
    read(m, "model", "lnet_w", c.lnet_w);
    read(m, "model", "local_radius", c.local_radius);
    read(m, "model", "backbone_channels", c.backbone.channels);
    read(m, "model", "decoder_channels", c.decoder_channels);
    read(m, "model", "refinement_channels", c.refinement_channels);
    read(m, "model", "cyclic_consistency", c.cyclic_consistency);
    read(m, "model", "iterative_refinement", c.iterative_refinement);
    read(m, "model", "refine_l2", c.refine_l2);
    read(m, "model", "refine_l4", c.refine_l4);
    std::string s;
    read(m, "model", "cost_norm_order", s);
    if (!s.empty()) {
      require(s == "normalize_then_relu" || s == "relu_then_normalize", ErrorKind::kValue,
              "config: model.cost_norm_order must be normalize_then_relu or relu_then_normalize");
      c.cost_norm_order = s == "normalize_then_relu" ? CostNormOrder::kNormalizeThenRelu : CostNormOrder::kReluThenNormalize;
    }
    s.clear();
    read(m, "model", "backbone", s);
    if (!s.empty()) {
      require(s == "toy" || s == "fixed", ErrorKind::kValue, "config: model.backbone must be toy or fixed");
      c.backbone.variant = s == "toy" ? BackboneVariant::kToyTrainable : BackboneVariant::kFixedLoaded;
    }
  }

  if (root.contains("transforms")) {
    const Json& t = root["transforms"];
    reject_unknown(t, "transforms",
                   {"kinds", "rotation_deg", "scale_min", "scale_max", "shear", "translation", "corner_jitter",
                    "tps_jitter", "tps_grid", "tps_regularization", "max_retries"});
    auto& c = rc.transforms;
    std::vector<std::string> kinds;
    read(t, "transforms", "kinds", kinds);
    if (t.contains("kinds")) {
      c.kinds.clear();
      for (const auto& k : kinds) c.kinds.push_back(parse_transform_kind(k));
    }
    read(t, "transforms", "rotation_deg", c.rotation_deg);
    read(t, "transforms", "scale_min", c.scale_min);
    read(t, "transforms", "scale_max", c.scale_max);
    read(t, "transforms", "shear", c.shear);
    read(t, "transforms", "translation", c.translation);
    read(t, "transforms", "corner_jitter", c.corner_jitter);
    read(t, "transforms", "tps_jitter", c.tps_jitter);
    read(t, "transforms", "tps_grid", c.tps_grid);
    read(t, "transforms", "tps_regularization", c.tps_regularization);
    read(t, "transforms", "max_retries", c.max_retries);
  }

  if (root.contains("train")) {
    const Json& t = root["train"];
    reject_unknown(t, "train",
                   {"alpha", "weight_decay", "batch_size", "learning_rate", "lr_decay", "lr_milestones", "iterations",
                    "seed"});
    auto& c = rc.train;
    read(t, "train", "alpha", c.alpha);
    read(t, "train", "weight_decay", c.weight_decay);
    read(t, "train", "batch_size", c.batch_size);
    read(t, "train", "learning_rate", c.learning_rate);
    read(t, "train", "lr_decay", c.lr_decay);
    read(t, "train", "lr_milestones", c.lr_milestones);
    read(t, "train", "iterations", c.iterations);
    read(t, "train", "seed", c.seed);
  }

  if (root.contains("seeds")) {
    const Json& s = root["seeds"];
    reject_unknown(s, "seeds", {"model", "data"});
    read(s, "seeds", "model", rc.seeds.model);
    read(s, "seeds", "data", rc.seeds.data);
  }

  validate(rc.model);
  validate(rc.transforms);
  validate(rc.train);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), base);
}

std::string run_config_to_json(const RunConfig& rc) {
  Json root;
  const auto& m = rc.model;
  root["model"] = {{"lnet_h", m.lnet_h},
                   {"lnet_w", m.lnet_w},
                   {"local_radius", m.local_radius},
                   {"backbone", variant_name(m.backbone.variant)},
                   {"backbone_channels", m.backbone.channels},
                   {"decoder_channels", m.decoder_channels},
                   {"refinement_channels", m.refinement_channels},
                   {"cyclic_consistency", m.cyclic_consistency},
                   {"iterative_refinement", m.iterative_refinement},
                   {"refine_l2", m.refine_l2},
                   {"refine_l4", m.refine_l4},
                   {"cost_norm_order", order_name(m.cost_norm_order)}};
  const auto& t = rc.transforms;
  std::vector<std::string> kinds;
  for (auto k : t.kinds) kinds.emplace_back(to_string(k));
  root["transforms"] = {{"kinds", kinds},
                        {"rotation_deg", t.rotation_deg},
                        {"scale_min", t.scale_min},
                        {"scale_max", t.scale_max},
                        {"shear", t.shear},
                        {"translation", t.translation},
                        {"corner_jitter", t.corner_jitter},
                        {"tps_jitter", t.tps_jitter},
                        {"tps_grid", t.tps_grid},
                        {"tps_regularization", t.tps_regularization},
                        {"max_retries", t.max_retries}};
  const auto& tr = rc.train;
  root["train"] = {{"alpha", tr.alpha},
                   {"weight_decay", tr.weight_decay},
                   {"batch_size", tr.batch_size},
                   {"learning_rate", tr.learning_rate},
                   {"lr_decay", tr.lr_decay},
                   {"lr_milestones", tr.lr_milestones},
                   {"iterations", tr.iterations},
                   {"seed", tr.seed}};
  root["seeds"] = {{"model", rc.seeds.model}, {"data", rc.seeds.data}};
  return root.dump(2);
}

RunConfig toy_run_config() {
  RunConfig rc;
  rc.model.lnet_h = 64;
  rc.model.lnet_w = 64;
  rc.model.local_radius = {2, 2, 2};
  rc.model.decoder_channels = {32, 32, 24, 16, 8};
  rc.model.refinement_channels = {32, 32, 32, 24, 16, 8};
  rc.train.batch_size = 4;
  rc.train.learning_rate = 1e-3;
  return rc;
}

}  // namespace dce
