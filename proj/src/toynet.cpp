// SPDX-License-Identifier: Apache-2.0
#include "stenosis/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "stenosis/errors.hpp"

namespace stenosis::nn {

using nlohmann::json;

std::string to_string(NetKind k) { return k == NetKind::classifier ? "classifier" : "detector"; }

NetKind net_kind_from_string(const std::string& s) {
  if (s == "classifier") return NetKind::classifier;
  if (s == "detector") return NetKind::detector;
  throw ValidationError("unknown network kind: " + s);
}

void ToyNetConfig::validate() const {
  if (in_channels == 0 || convs_per_block == 0) throw ValidationError("toynet: empty layer");
  for (auto c : block_channels) {
    if (c == 0) throw ValidationError("toynet: zero channel block");
  }
  if (kind == NetKind::classifier && num_classes < 2) throw ValidationError("toynet: need >= 2 classes");
  if (kind == NetKind::detector) {
    if (fpn_channels == 0 || head_channels == 0 || anchors_per_location == 0) {
      throw ValidationError("toynet: empty detector head");
    }
    if (!(prior_probability > 0.0 && prior_probability < 1.0)) {
      throw ValidationError("toynet: prior probability must be in (0, 1)");
    }
  }
}

geom::AnchorConfig detector_anchor_config(double base_multiplier) {
  if (!(base_multiplier > 0.0)) throw ValidationError("anchor base multiplier must be positive");
  auto cfg = geom::AnchorConfig::retina_default();
  cfg.levels.clear();
  for (auto s : kPyramidStrides) {
    cfg.levels.push_back({static_cast<double>(s), base_multiplier * static_cast<double>(s)});
  }
  return cfg;
}

double normalize_pixel(double v) { return (v - 128.0) / 64.0; }

Tensor to_tensor(const std::vector<const ImageF*>& images) {
  if (images.empty()) throw ValidationError("to_tensor: empty batch");
  const auto w = images.front()->width, h = images.front()->height;
  Tensor t(images.size(), 1, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = *images[i];
    if (im.width != w || im.height != h) throw ValidationError("to_tensor: images differ in size");
    auto dst = t.sample(i);
    for (std::size_t k = 0; k < im.pixels.size(); ++k) dst[k] = normalize_pixel(im.pixels[k]);
  }
  return t;
}

// ---------------------------------------------------------------------------

ToyNet::ToyNet(const ToyNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build();
  init_params(seed);
}

std::size_t ToyNet::add_param(const std::string& name, const std::string& block, bool bias,
                              std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  Parameter p;
  p.name = name;
  p.block = block;
  p.is_bias = bias;
  p.shape = std::move(shape);
  p.value.assign(n, 0.0);
  p.grad.assign(n, 0.0);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

Conv ToyNet::add_conv(const std::string& name, const std::string& block, const ConvGeometry& g) {
  Conv c;
  c.geom = g;
  c.weight = add_param(name + ".w", block, false, {g.out_c, g.in_c, g.kernel, g.kernel});
  c.bias = add_param(name + ".b", block, true, {g.out_c});
  return c;
}

void ToyNet::build() {
  params_.clear();
  backbone_.clear();
  std::size_t in_c = cfg_.in_channels;
  for (std::size_t b = 0; b < 5; ++b) {
    const std::string block = "C" + std::to_string(b + 1);
    const std::size_t out_c = cfg_.block_channels[b];
    for (std::size_t j = 0; j < cfg_.convs_per_block; ++j) {
      ConvGeometry g{j == 0 ? in_c : out_c, out_c, 3, j == 0 ? 2u : 1u, 1};
      backbone_.push_back(add_conv(block + ".conv" + std::to_string(j + 1), block, g));
    }
    in_c = out_c;
  }
  if (cfg_.kind == NetKind::classifier) {
    fc_w_ = add_param("fc.w", "FC", false, {cfg_.num_classes, cfg_.block_channels[4]});
    fc_b_ = add_param("fc.b", "FC", true, {cfg_.num_classes});
    return;
  }
  const std::size_t f = cfg_.fpn_channels, hc = cfg_.head_channels, a = cfg_.anchors_per_location;
  lat3_ = add_conv("fpn.lat3", "FPN", {cfg_.block_channels[2], f, 1, 1, 0});
  lat4_ = add_conv("fpn.lat4", "FPN", {cfg_.block_channels[3], f, 1, 1, 0});
  lat5_ = add_conv("fpn.lat5", "FPN", {cfg_.block_channels[4], f, 1, 1, 0});
  out3_ = add_conv("fpn.out3", "FPN", {f, f, 3, 1, 1});
  out4_ = add_conv("fpn.out4", "FPN", {f, f, 3, 1, 1});
  cls_hidden_ = add_conv("head.cls_hidden", "HEAD", {f, hc, 3, 1, 1});
  cls_out_ = add_conv("head.cls_out", "HEAD", {hc, a, 3, 1, 1});
  reg_hidden_ = add_conv("head.reg_hidden", "HEAD", {f, hc, 3, 1, 1});
  reg_out_ = add_conv("head.reg_out", "HEAD", {hc, 4 * a, 3, 1, 1});
}

void ToyNet::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    if (p.is_bias) continue;
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < p.shape.size(); ++d) fan_in *= p.shape[d];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : p.value) v = dist(rng);
  }
  if (cfg_.kind == NetKind::detector) {
    // output convs start near zero, as in the usual one-stage detector recipe
    std::normal_distribution<double> small(0.0, 0.01);
    for (const auto idx : {cls_out_.weight, reg_out_.weight}) {
      for (double& v : params_[idx].value) v = small(rng);
    }
    const double pi = cfg_.prior_probability;
    for (double& v : params_[cls_out_.bias].value) v = -std::log((1.0 - pi) / pi);
  }
}

Parameter& ToyNet::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw NotFoundError("no parameter named " + name);
}

void ToyNet::set_trainable_blocks(const std::set<std::string>& blocks) {
  for (auto& p : params_) p.trainable = blocks.count(p.block) > 0;
}

void ToyNet::set_all_trainable() {
  for (auto& p : params_) p.trainable = true;
}

void ToyNet::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::size_t ToyNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ToyNet::anchor_count(std::size_t height, std::size_t width) const {
  std::size_t h = height, w = width, total = 0;
  for (std::size_t b = 0; b < 4; ++b) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    if (b >= 2) total += h * w;
  }
  return total * cfg_.anchors_per_location;
}

// ---------------------------------------------------------------------------

Tensor ToyNet::conv_fwd(const Conv& c, const Tensor& x) const {
  return ops::conv2d(x, c.geom, params_[c.weight].value, params_[c.bias].value);
}

Tensor ToyNet::conv_bwd(const Conv& c, const Tensor& x, const Tensor& dy, bool want_dx, bool param_grads) {
  auto& w = params_[c.weight];
  auto& b = params_[c.bias];
  std::span<double> dw, db;
  if (param_grads && w.trainable) dw = w.grad;
  if (param_grads && b.trainable) db = b.grad;
  if (dw.empty() && db.empty() && !want_dx) return {};
  return ops::conv2d_backward(x, c.geom, w.value, dy, dw, db, want_dx);
}

bool ToyNet::any_trainable(const Conv& c) const {
  return params_[c.weight].trainable || params_[c.bias].trainable;
}

bool ToyNet::trainable_through_block(std::size_t k) const {
  const std::size_t end = std::min(k, std::size_t{5}) * cfg_.convs_per_block;
  for (std::size_t j = 0; j < end; ++j) {
    if (any_trainable(backbone_[j])) return true;
  }
  return false;
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ValidationError("tensor add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace

ForwardCache ToyNet::forward(const Tensor& batch) const {
  if (batch.n == 0 || batch.h == 0 || batch.w == 0) throw ValidationError("forward: empty batch");
  if (batch.c != cfg_.in_channels) throw ValidationError("forward: input channel mismatch");
  ForwardCache cache;
  cache.input = batch;
  const Tensor* x = &cache.input;
  cache.backbone.reserve(backbone_.size());
  for (std::size_t j = 0; j < backbone_.size(); ++j) {
    Tensor y = conv_fwd(backbone_[j], *x);
    ops::relu_inplace(y);
    cache.backbone.push_back(std::move(y));
    x = &cache.backbone.back();
    if ((j + 1) % cfg_.convs_per_block == 0) cache.blocks[j / cfg_.convs_per_block] = *x;
  }

  if (cfg_.kind == NetKind::classifier) {
    cache.pooled = ops::global_avg_pool(cache.blocks[4]);
    cache.logits = ops::linear(cache.pooled, cfg_.num_classes, params_[fc_w_].value, params_[fc_b_].value);
    cache.valid = true;
    return cache;
  }

  cache.lat5 = conv_fwd(lat5_, cache.blocks[4]);
  cache.lat4 = conv_fwd(lat4_, cache.blocks[3]);
  cache.lat3 = conv_fwd(lat3_, cache.blocks[2]);
  cache.td4 = cache.lat4;
  add_inplace(cache.td4, ops::upsample2x(cache.lat5, cache.lat4.h, cache.lat4.w));
  cache.td3 = cache.lat3;
  add_inplace(cache.td3, ops::upsample2x(cache.td4, cache.lat3.h, cache.lat3.w));
  cache.pyramid[0] = conv_fwd(out3_, cache.td3);
  cache.pyramid[1] = conv_fwd(out4_, cache.td4);
  for (std::size_t l = 0; l < 2; ++l) {
    cache.hidden_cls[l] = conv_fwd(cls_hidden_, cache.pyramid[l]);
    ops::relu_inplace(cache.hidden_cls[l]);
    cache.cls_prob[l] = conv_fwd(cls_out_, cache.hidden_cls[l]);
    for (double& v : cache.cls_prob[l].data) v = sigmoid(v);
    cache.hidden_reg[l] = conv_fwd(reg_hidden_, cache.pyramid[l]);
    ops::relu_inplace(cache.hidden_reg[l]);
    cache.reg_out[l] = conv_fwd(reg_out_, cache.hidden_reg[l]);
  }
  cache.valid = true;
  return cache;
}

DetectorOutput ToyNet::detector_output(const ForwardCache& cache) {
  if (!cache.valid || cache.cls_prob[0].n == 0) throw ValidationError("detector_output: no detector cache");
  const std::size_t n = cache.cls_prob[0].n;
  DetectorOutput out;
  out.probs.resize(n);
  out.regs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& p = cache.cls_prob[l];
      const auto& r = cache.reg_out[l];
      const std::size_t a_count = p.c;
      for (std::size_t y = 0; y < p.h; ++y) {
        for (std::size_t x = 0; x < p.w; ++x) {
          for (std::size_t a = 0; a < a_count; ++a) {
            out.probs[i].push_back(p.at(i, a, y, x));
            for (std::size_t k = 0; k < 4; ++k) out.regs[i].push_back(r.at(i, a * 4 + k, y, x));
          }
        }
      }
    }
  }
  return out;
}

std::vector<std::vector<double>> ToyNet::class_probabilities(const ForwardCache& cache) {
  if (!cache.valid || cache.logits.n == 0) throw ValidationError("class_probabilities: no classifier cache");
  std::vector<std::vector<double>> out(cache.logits.n);
  for (std::size_t i = 0; i < cache.logits.n; ++i) {
    const auto z = cache.logits.sample(i);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    for (double v : z) out[i].push_back(std::exp(v - m) / s);
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor ToyNet::backward_classifier(const ForwardCache& cache, const Tensor& d_logits,
                                   const BackwardOptions& opt) {
  if (!cache.valid || cache.logits.n == 0) throw ValidationError("backward: missing forward cache");
  if (!d_logits.same_shape(cache.logits)) throw ValidationError("backward: logit gradient shape mismatch");
  auto& fw = params_[fc_w_];
  auto& fb = params_[fc_b_];
  std::span<double> dw, db;
  if (opt.param_grads && fw.trainable) dw = fw.grad;
  if (opt.param_grads && fb.trainable) db = fb.grad;
  Tensor d_pooled = ops::linear_backward(cache.pooled, cfg_.num_classes, fw.value, d_logits, dw, db, true);
  const auto& c5 = cache.blocks[4];
  Tensor d_c5 = ops::global_avg_pool_backward(d_pooled, c5.h, c5.w);
  if (!opt.param_grads) return d_c5;

  Tensor dy = d_c5;
  for (std::size_t j = backbone_.size(); j-- > 0;) {
    if (!trainable_through_block(j / cfg_.convs_per_block + 1)) break;
    bool want_dx = false;
    for (std::size_t i = 0; i < j; ++i) want_dx = want_dx || any_trainable(backbone_[i]);
    ops::relu_backward_inplace(cache.backbone[j], dy);
    const Tensor& x = j == 0 ? cache.input : cache.backbone[j - 1];
    Tensor dx = conv_bwd(backbone_[j], x, dy, want_dx, true);
    if (!want_dx) break;
    dy = std::move(dx);
  }
  return d_c5;
}

void ToyNet::backward_detector(const ForwardCache& cache, const std::vector<std::vector<double>>& d_probs,
                               const std::vector<std::vector<double>>& d_regs) {
  if (!cache.valid || cache.cls_prob[0].n == 0) throw ValidationError("backward: missing forward cache");
  const std::size_t n = cache.cls_prob[0].n;
  if (d_probs.size() != n || d_regs.size() != n) throw ValidationError("backward: batch size mismatch");
  const std::size_t a_count = cfg_.anchors_per_location;

  std::array<Tensor, 2> d_cls, d_reg;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& p = cache.cls_prob[l];
    d_cls[l] = Tensor(n, p.c, p.h, p.w);
    d_reg[l] = Tensor(n, 4 * a_count, p.h, p.w);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t total = cache.cls_prob[0].plane() * a_count + cache.cls_prob[1].plane() * a_count;
    if (d_probs[i].size() != total || d_regs[i].size() != 4 * total) {
      throw ValidationError("backward: anchor gradient size mismatch");
    }
    std::size_t idx = 0;
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& p = cache.cls_prob[l];
      for (std::size_t y = 0; y < p.h; ++y) {
        for (std::size_t x = 0; x < p.w; ++x) {
          for (std::size_t a = 0; a < a_count; ++a, ++idx) {
            const double pv = p.at(i, a, y, x);
            d_cls[l].at(i, a, y, x) = d_probs[i][idx] * pv * (1.0 - pv);
            for (std::size_t k = 0; k < 4; ++k) d_reg[l].at(i, a * 4 + k, y, x) = d_regs[i][idx * 4 + k];
          }
        }
      }
    }
  }

  std::array<Tensor, 2> d_pyr;
  for (std::size_t l = 0; l < 2; ++l) {
    Tensor dh = conv_bwd(cls_out_, cache.hidden_cls[l], d_cls[l], true, true);
    ops::relu_backward_inplace(cache.hidden_cls[l], dh);
    d_pyr[l] = conv_bwd(cls_hidden_, cache.pyramid[l], dh, true, true);
    Tensor dr = conv_bwd(reg_out_, cache.hidden_reg[l], d_reg[l], true, true);
    ops::relu_backward_inplace(cache.hidden_reg[l], dr);
    add_inplace(d_pyr[l], conv_bwd(reg_hidden_, cache.pyramid[l], dr, true, true));
  }
  Tensor d_td3 = conv_bwd(out3_, cache.td3, d_pyr[0], true, true);
  Tensor d_td4 = conv_bwd(out4_, cache.td4, d_pyr[1], true, true);
  add_inplace(d_td4, ops::upsample2x_backward(d_td3, cache.td4.h, cache.td4.w));
  Tensor d_lat5 = ops::upsample2x_backward(d_td4, cache.lat5.h, cache.lat5.w);

  std::array<Tensor, 5> d_block;
  d_block[2] = conv_bwd(lat3_, cache.blocks[2], d_td3, trainable_through_block(3), true);
  d_block[3] = conv_bwd(lat4_, cache.blocks[3], d_td4, trainable_through_block(4), true);
  d_block[4] = conv_bwd(lat5_, cache.blocks[4], d_lat5, trainable_through_block(5), true);

  Tensor dy;
  const std::size_t cpb = cfg_.convs_per_block;
  for (std::size_t j = backbone_.size(); j-- > 0;) {
    const std::size_t b = j / cpb;
    if (!trainable_through_block(b + 1)) break;
    if ((j + 1) % cpb == 0 && d_block[b].n != 0) {
      if (dy.n == 0) {
        dy = d_block[b];
      } else {
        add_inplace(dy, d_block[b]);
      }
    }
    if (dy.n == 0) continue;
    bool want_dx = false;
    for (std::size_t i = 0; i < j; ++i) want_dx = want_dx || any_trainable(backbone_[i]);
    ops::relu_backward_inplace(cache.backbone[j], dy);
    const Tensor& x = j == 0 ? cache.input : cache.backbone[j - 1];
    Tensor dx = conv_bwd(backbone_[j], x, dy, want_dx, true);
    if (!want_dx) break;
    dy = std::move(dx);
  }
}

// ---------------------------------------------------------------------------

json ToyNet::to_json() const {
  json cfg = {
      {"kind", to_string(cfg_.kind)},
      {"in_channels", cfg_.in_channels},
      {"block_channels", cfg_.block_channels},
      {"convs_per_block", cfg_.convs_per_block},
      {"num_classes", cfg_.num_classes},
      {"fpn_channels", cfg_.fpn_channels},
      {"head_channels", cfg_.head_channels},
      {"anchors_per_location", cfg_.anchors_per_location},
      {"prior_probability", cfg_.prior_probability},
  };
  json params = json::array();
  for (const auto& p : params_) {
    params.push_back({{"name", p.name},
                      {"block", p.block},
                      {"bias", p.is_bias},
                      {"trainable", p.trainable},
                      {"shape", p.shape},
                      {"value", p.value}});
  }
  return {{"config", cfg}, {"params", params}};
}

ToyNet ToyNet::from_json(const json& j) {
  try {
    const auto& c = j.at("config");
    ToyNet net;
    net.cfg_.kind = net_kind_from_string(c.at("kind").get<std::string>());
    net.cfg_.in_channels = c.at("in_channels").get<std::size_t>();
    net.cfg_.block_channels = c.at("block_channels").get<std::array<std::size_t, 5>>();
    net.cfg_.convs_per_block = c.at("convs_per_block").get<std::size_t>();
    net.cfg_.num_classes = c.at("num_classes").get<std::size_t>();
    net.cfg_.fpn_channels = c.at("fpn_channels").get<std::size_t>();
    net.cfg_.head_channels = c.at("head_channels").get<std::size_t>();
    net.cfg_.anchors_per_location = c.at("anchors_per_location").get<std::size_t>();
    net.cfg_.prior_probability = c.at("prior_probability").get<double>();
    net.cfg_.validate();
    net.build();
    const auto& ps = j.at("params");
    if (ps.size() != net.params_.size()) throw ValidationError("checkpoint: parameter count mismatch");
    for (const auto& jp : ps) {
      auto& p = net.param(jp.at("name").get<std::string>());
      if (jp.at("shape").get<std::vector<std::size_t>>() != p.shape) {
        throw ValidationError("checkpoint: shape mismatch for " + p.name);
      }
      p.value = jp.at("value").get<std::vector<double>>();
      p.trainable = jp.value("trainable", true);
    }
    return net;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  } catch (const NotFoundError& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ToyNet& net, const json& schedule,
                     const json& extra) {
  json j = {{"format", "stenosis-toynet"},
            {"version", kCheckpointVersion},
            {"net", net.to_json()},
            {"schedule", schedule},
            {"extra", extra}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump();
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "stenosis-toynet") throw ValidationError("checkpoint: unknown format");
  if (j.value("version", 0) != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version");
  return Checkpoint{ToyNet::from_json(j.at("net")), j.value("schedule", json::object()),
                    j.value("extra", json::object())};
}

}  // namespace stenosis::nn
