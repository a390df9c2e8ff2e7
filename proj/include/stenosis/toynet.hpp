// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "stenosis/geometry.hpp"
#include "stenosis/image.hpp"
#include "stenosis/tensor.hpp"

namespace stenosis::nn {

enum class NetKind { classifier, detector };

std::string to_string(NetKind k);
NetKind net_kind_from_string(const std::string& s);

struct ToyNetConfig {
  NetKind kind = NetKind::classifier;
  std::size_t in_channels = 1;
  std::array<std::size_t, 5> block_channels{8, 16, 16, 32, 32};
  std::size_t convs_per_block = 1;  // first conv of a block has stride 2
  std::size_t num_classes = 2;      // classifier only
  // detector only
  std::size_t fpn_channels = 16;
  std::size_t head_channels = 16;
  std::size_t anchors_per_location = 12;
  double prior_probability = 0.01;

  void validate() const;
};

/// Detector pyramid strides (levels fed from C3 and C4).
inline constexpr std::array<std::size_t, 2> kPyramidStrides{8, 16};

/// Anchor layout matching the detector heads for a given base-size multiplier.
geom::AnchorConfig detector_anchor_config(double base_multiplier = 2.0);

struct Parameter {
  std::string name;
  std::string block;  // C1..C5, FPN, HEAD, FC
  bool is_bias = false;
  bool trainable = true;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
};

struct Conv {
  ConvGeometry geom;
  std::size_t weight = 0, bias = 0;  // indices into the parameter store
};

/// Everything backward() needs. Produced by forward().
struct ForwardCache {
  Tensor input;
  std::vector<Tensor> backbone;   // output of every backbone conv, post-ReLU
  std::array<Tensor, 5> blocks;   // C1..C5 outputs (aliases of backbone entries)
  // classifier
  Tensor pooled, logits;
  // detector
  Tensor lat3, lat4, lat5, td4, td3;   // laterals and top-down sums
  std::array<Tensor, 2> pyramid;       // P3, P4 (post output conv)
  std::array<Tensor, 2> hidden_cls, hidden_reg;
  std::array<Tensor, 2> cls_prob;      // sigmoid applied, [n, A, h, w]
  std::array<Tensor, 2> reg_out;       // [n, 4A, h, w]
  bool valid = false;
};

struct DetectorOutput {
  // per sample, anchor-major order matching geom::generate_anchors
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<double>> regs;  // 4 per anchor
};

struct BackwardOptions {
  bool param_grads = true;
};

class ToyNet {
 public:
  ToyNet(const ToyNetConfig& cfg, std::uint64_t seed);

  const ToyNetConfig& config() const noexcept { return cfg_; }
  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }
  Parameter& param(const std::string& name);

  /// Only parameters whose block is in `blocks` stay trainable.
  void set_trainable_blocks(const std::set<std::string>& blocks);
  void set_all_trainable();
  void zero_grad();
  std::size_t parameter_count() const;

  /// Input is [n, in_channels, h, w], any h, w >= 1.
  ForwardCache forward(const Tensor& batch) const;

  static DetectorOutput detector_output(const ForwardCache& cache);
  static std::vector<std::vector<double>> class_probabilities(const ForwardCache& cache);
  std::size_t anchor_count(std::size_t height, std::size_t width) const;

  /// Accumulates parameter gradients for trainable parameters. Returns dL/dC5.
  Tensor backward_classifier(const ForwardCache& cache, const Tensor& d_logits,
                             const BackwardOptions& opt = {});
  /// d_probs / d_regs use the anchor-major layout of DetectorOutput.
  void backward_detector(const ForwardCache& cache, const std::vector<std::vector<double>>& d_probs,
                         const std::vector<std::vector<double>>& d_regs);

  nlohmann::json to_json() const;
  static ToyNet from_json(const nlohmann::json& j);

 private:
  ToyNet() = default;
  std::size_t add_param(const std::string& name, const std::string& block, bool bias,
                        std::vector<std::size_t> shape);
  Conv add_conv(const std::string& name, const std::string& block, const ConvGeometry& g);
  void init_params(std::uint64_t seed);
  void build();

  Tensor conv_fwd(const Conv& c, const Tensor& x) const;
  Tensor conv_bwd(const Conv& c, const Tensor& x, const Tensor& dy, bool want_dx, bool param_grads);
  bool trainable_through_block(std::size_t k) const;  // any trainable param in C1..Ck
  bool any_trainable(const Conv& c) const;

  ToyNetConfig cfg_;
  std::vector<Parameter> params_;
  std::vector<Conv> backbone_;  // in order; block k owns convs_per_block entries
  Conv lat3_, lat4_, lat5_, out3_, out4_;
  Conv cls_hidden_, cls_out_, reg_hidden_, reg_out_;
  std::size_t fc_w_ = 0, fc_b_ = 0;
};

/// Pixel scaling used by every network entry point.
double normalize_pixel(double v);
Tensor to_tensor(const std::vector<const ImageF*>& images);

struct Checkpoint {
  ToyNet net;
  nlohmann::json schedule;  // free-form metadata, e.g. the training schedule
  nlohmann::json extra;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ToyNet& net, const nlohmann::json& schedule,
                     const nlohmann::json& extra);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stenosis::nn
