#pragma once

// The two detector families, each with an optional interaction branch:
//
//   one-class:       clip -> encoder -> [avgpool -> linear | fuse_oc(+GCN)] -> z,
//                    score = ||z - c||^2
//   reconstruction:  clip -> encoder -> [h | fuse_recon(h, GCN)] -> decoder -> xhat,
//                    score = ||x - xhat||^2

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vadkit/backbone.hpp"
#include "vadkit/interaction.hpp"
#include "vadkit/recon.hpp"
#include "vadkit/svdd.hpp"

namespace vadkit {

enum class Method { OneClass, Reconstruction };

inline std::string to_string(Method m) { return m == Method::OneClass ? "ocsvdd" : "recon"; }

inline Method parse_method(const std::string& s) {
  if (s == "ocsvdd") return Method::OneClass;
  if (s == "recon") return Method::Reconstruction;
  throw Error("unknown method '" + s + "' (expected ocsvdd or recon)");
}

struct ProposalConfig {
  std::string provider = "grid";
  std::size_t per_frame = 25;
  std::string file;
};

struct ModelConfig {
  Method method = Method::Reconstruction;
  bool gcn = false;
  /// Input clips carry two extra optical-flow channels (RGB+uv).
  bool flow = false;
  BackboneConfig backbone = BackboneConfig::toy();
  std::size_t z_dim = 128;
  ProposalConfig proposals;

  std::size_t channels() const { return flow ? 5 : 3; }
  std::size_t clip_length() const { return backbone.input_shape[0]; }

  /// Fills in the derived backbone fields and checks mode constraints.
  void resolve() {
    backbone.input_shape.at(3) = channels();
    backbone.bias = method == Method::Reconstruction;
    backbone.decoder_extra_channels =
        (method == Method::Reconstruction && gcn) ? backbone.bottleneck_channels() : 0;
    backbone.validate();
    if (z_dim == 0) throw Error("z_dim must be >= 1");
    if (gcn && proposals.per_frame == 0) throw Error("proposals.per_frame must be >= 1");
  }
};

inline nlohmann::json backbone_to_json(const BackboneConfig& b) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : b.stages)
    stages.push_back({{"channels", s.channels}, {"stride", s.stride}, {"kernel", s.kernel}});
  return {{"input_shape", b.input_shape}, {"stages", stages}};
}

/// Accepts either {"preset": name} or an explicit
/// {"input_shape": [T,H,W(,C)], "stages": [{channels, stride, kernel}, ...]}.
/// The channel count is always overwritten by ModelConfig::resolve().
inline BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig b;
  if (j.contains("preset")) {
    b = BackboneConfig::preset(j.at("preset").get<std::string>());
  } else {
    b.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& s : j.at("stages")) {
      StageConfig st;
      st.channels = s.at("channels").get<std::size_t>();
      st.stride = s.at("stride").get<Triple>();
      st.kernel = s.contains("kernel") ? s.at("kernel").get<Triple>() : st.stride;
      b.stages.push_back(st);
    }
  }
  if (b.input_shape.size() == 3) b.input_shape.push_back(3);
  return b;
}

inline nlohmann::json model_to_json(const ModelConfig& c) {
  return {{"method", to_string(c.method)},
          {"gcn", c.gcn},
          {"flow", c.flow},
          {"z_dim", c.z_dim},
          {"backbone", backbone_to_json(c.backbone)},
          {"proposals",
           {{"provider", c.proposals.provider},
            {"per_frame", c.proposals.per_frame},
            {"file", c.proposals.file}}}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  c.gcn = j.value("gcn", c.gcn);
  c.flow = j.value("flow", c.flow);
  c.z_dim = j.value("z_dim", c.z_dim);
  if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"));
  if (j.contains("proposals")) {
    const auto& p = j.at("proposals");
    c.proposals.provider = p.value("provider", c.proposals.provider);
    c.proposals.per_frame = p.value("per_frame", c.proposals.per_frame);
    c.proposals.file = p.value("file", c.proposals.file);
  }
  c.resolve();
  return c;
}

/// A clip plus where it came from (needed by proposal providers).
template <typename T>
struct Sample {
  Tensor<T> clip;
  ProposalContext context;
};

template <typename T>
class AnomalyModel {
 public:
  explicit AnomalyModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.resolve();
    encoder_ = Encoder<T>(cfg_.backbone, params_);
    const Shape bott = cfg_.backbone.bottleneck_shape();
    if (cfg_.method == Method::OneClass) {
      if (cfg_.gcn)
        branch_ = InteractionBranch<T>(FusionKind::OneClass, bott, cfg_.z_dim, params_);
      else
        head_ = OneClassHead<T>(bott[3], cfg_.z_dim, params_);
    } else {
      if (cfg_.gcn)
        branch_ = InteractionBranch<T>(FusionKind::Reconstruction, bott, cfg_.z_dim, params_);
      decoder_ = Decoder<T>(cfg_.backbone, params_);
    }
    if (cfg_.gcn) provider_ = make_provider(cfg_.proposals.provider, cfg_.proposals.file);
    grid_ = FeatureGrid::from_shapes(cfg_.backbone.input_shape, bott);
  }

  AnomalyModel(const AnomalyModel&) = delete;
  AnomalyModel& operator=(const AnomalyModel&) = delete;
  AnomalyModel(AnomalyModel&&) = default;
  AnomalyModel& operator=(AnomalyModel&&) = default;

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    encoder_.initialize(params_, rng);
    if (head_) head_->initialize(params_, rng);
    if (branch_) branch_->initialize(params_, rng);
    if (decoder_) decoder_->initialize(params_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  Center<T>& center() { return center_; }
  const Center<T>& center() const { return center_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const FeatureGrid& feature_grid() const { return grid_; }

  ProposalSet proposals(const ProposalContext& ctx) const {
    if (!provider_) throw Error("model has no interaction branch");
    return provider_->propose(ctx, grid_, cfg_.proposals.per_frame);
  }

  /// One-class embedding z (length Z).
  Tensor<T> embed(const Sample<T>& s) const {
    require(cfg_.method == Method::OneClass, "embed() needs a one-class model");
    const Tensor<T> h = encoder_.forward(params_, s.clip);
    if (branch_) return branch_->forward_oc(params_, h, proposals(s.context));
    return head_->forward(params_, h);
  }

  /// Reconstruction xhat (clip-shaped).
  Tensor<T> reconstruct(const Sample<T>& s) const {
    require(cfg_.method == Method::Reconstruction, "reconstruct() needs a reconstruction model");
    const Tensor<T> h = encoder_.forward(params_, s.clip);
    if (branch_) return decoder_->forward(params_, branch_->forward_recon(params_, h, proposals(s.context)));
    return decoder_->forward(params_, h);
  }

  /// Anomaly score of one clip.
  T score(const Sample<T>& s, Reduction reduction = Reduction::Sum) const {
    if (cfg_.method == Method::OneClass) return svdd_score(embed(s).span(), center_);
    return recon_score(s.clip, reconstruct(s), reduction);
  }

  /// c = mean embedding of the given clips (snapped away from zero), frozen.
  void init_center(std::span<const Sample<T>> samples) {
    require(cfg_.method == Method::OneClass, "init_center() needs a one-class model");
    if (samples.empty()) throw Error("SVDD center initialisation needs at least one clip");
    Tensor<T> feats({samples.size(), cfg_.z_dim});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor<T> z = embed(samples[i]);
      std::copy(z.data(), z.data() + z.size(), feats.data() + i * cfg_.z_dim);
    }
    center_.initialize(feats);
  }

  void set_center(Center<T> c) { center_ = std::move(c); }

  /// Batch objective and its gradient w.r.t. every parameter (added into
  /// grads). lambda is the SVDD weight decay and is ignored for
  /// reconstruction.
  T loss_and_gradients(std::span<const Sample<T>> batch, Gradients<T>& grads, T lambda = T(0)) const {
    if (batch.empty()) throw Error("empty training batch");
    return cfg_.method == Method::OneClass ? oc_step(batch, grads, lambda) : recon_step(batch, grads);
  }

 private:
  struct ForwardState {
    StackTrace<T> enc;
    StackTrace<T> dec;
    typename InteractionBranch<T>::Trace branch;
    Tensor<T> out;
  };

  ForwardState forward_traced(const Sample<T>& s) const {
    ForwardState st;
    const Tensor<T> h = encoder_.forward(params_, s.clip, &st.enc);
    if (cfg_.method == Method::OneClass) {
      st.out = branch_ ? branch_->forward_oc(params_, h, proposals(s.context), &st.branch)
                       : head_->forward(params_, h);
    } else {
      const Tensor<T> in =
          branch_ ? branch_->forward_recon(params_, h, proposals(s.context), &st.branch) : h;
      st.out = decoder_->forward(params_, in, &st.dec);
    }
    return st;
  }

  T oc_step(std::span<const Sample<T>> batch, Gradients<T>& grads, T lambda) const {
    std::vector<ForwardState> states;
    Tensor<T> feats({batch.size(), cfg_.z_dim});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      states.push_back(forward_traced(batch[i]));
      std::copy(states.back().out.data(), states.back().out.data() + cfg_.z_dim,
                feats.data() + i * cfg_.z_dim);
    }
    const SvddLoss<T> loss = svdd_loss(feats, center_, params_.decay_norm(), lambda);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor<T> dz({cfg_.z_dim});
      std::copy(loss.dfeatures.data() + i * cfg_.z_dim,
                loss.dfeatures.data() + (i + 1) * cfg_.z_dim, dz.data());
      const Tensor<T>& h = states[i].enc.acts.back();
      Tensor<T> dh = branch_ ? branch_->backward_oc(params_, h, states[i].branch, dz, grads)
                             : head_->backward(params_, h, dz, grads);
      encoder_.backward(params_, states[i].enc, std::move(dh), grads);
    }
    add_weight_decay(params_, grads, lambda);
    return loss.value;
  }

  T recon_step(std::span<const Sample<T>> batch, Gradients<T>& grads) const {
    std::vector<ForwardState> states;
    std::vector<Tensor<T>> xs, xhats;
    for (const auto& s : batch) {
      states.push_back(forward_traced(s));
      xs.push_back(s.clip);
      xhats.push_back(states.back().out);
    }
    const ReconLoss<T> loss = recon_loss<T>(xs, xhats);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor<T> din = decoder_->backward(params_, states[i].dec, loss.dxhat[i], grads);
      Tensor<T> dh = branch_ ? branch_->backward_recon(params_, states[i].branch, din, grads)
                             : std::move(din);
      encoder_.backward(params_, states[i].enc, std::move(dh), grads);
    }
    return loss.value;
  }

  ModelConfig cfg_;
  ParameterSet<T> params_;
  Encoder<T> encoder_;
  std::optional<OneClassHead<T>> head_;
  std::optional<InteractionBranch<T>> branch_;
  std::optional<Decoder<T>> decoder_;
  std::unique_ptr<ProposalProvider> provider_;
  FeatureGrid grid_;
  Center<T> center_;
};

}  // namespace vadkit
