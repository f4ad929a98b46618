#pragma once

// Binary checkpoints: a magic line, a length-prefixed JSON header and the raw
// float32 payload (parameters, then Adam moments, then the SVDD center).
// Everything needed to resume training exactly is stored.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vadkit/adam.hpp"
#include "vadkit/image_io.hpp"
#include "vadkit/model.hpp"

namespace vadkit {

inline constexpr char kCheckpointMagic[] = "VADKIT-CKPT 1\n";

struct Checkpoint {
  ModelConfig model;
  /// Training configuration, echoed verbatim (may be null).
  nlohmann::json train;
  long step = 0;
  std::string stream_state;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<Tensor<float>> values, adam_m, adam_v;
  std::optional<std::vector<float>> center;
};

namespace ckpt_detail {

inline void write_floats(std::ofstream& out, const Tensor<float>& t) {
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline void read_floats(std::ifstream& in, Tensor<float>& t, const fs::path& path) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) throw Error("checkpoint " + path.string() + " is truncated");
}

}  // namespace ckpt_detail

/// Writes to a temporary file and renames it over `path`, so an interrupted
/// save never clobbers the previous checkpoint.
inline void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  const bool with_adam = !c.adam_m.empty();
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < c.names.size(); ++i)
    params.push_back({{"name", c.names[i]}, {"shape", c.shapes[i]}});
  nlohmann::json header = {{"model", model_to_json(c.model)},
                           {"train", c.train},
                           {"step", c.step},
                           {"stream_state", c.stream_state},
                           {"params", params},
                           {"adam", with_adam},
                           {"center_dim", c.center ? c.center->size() : 0},
                           {"has_center", c.center.has_value()}};
  const std::string text = header.dump();
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic - 1);
    const std::uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(text.data(), static_cast<std::streamsize>(n));
    for (const auto& t : c.values) ckpt_detail::write_floats(out, t);
    if (with_adam) {
      for (const auto& t : c.adam_m) ckpt_detail::write_floats(out, t);
      for (const auto& t : c.adam_v) ckpt_detail::write_floats(out, t);
    }
    if (c.center)
      out.write(reinterpret_cast<const char*>(c.center->data()),
                static_cast<std::streamsize>(c.center->size() * sizeof(float)));
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string magic(sizeof kCheckpointMagic - 1, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic) throw Error(path.string() + " is not a vadkit checkpoint");
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n > (1u << 26)) throw Error("checkpoint " + path.string() + " has a corrupt header");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error("checkpoint " + path.string() + " is truncated");
  const auto header = nlohmann::json::parse(text);

  Checkpoint c;
  c.model = model_from_json(header.at("model"));
  c.train = header.at("train");
  c.step = header.at("step").get<long>();
  c.stream_state = header.at("stream_state").get<std::string>();
  for (const auto& p : header.at("params")) {
    c.names.push_back(p.at("name").get<std::string>());
    c.shapes.push_back(p.at("shape").get<Shape>());
  }
  for (const auto& s : c.shapes) {
    c.values.emplace_back(s);
    ckpt_detail::read_floats(in, c.values.back(), path);
  }
  if (header.at("adam").get<bool>()) {
    for (auto* moments : {&c.adam_m, &c.adam_v})
      for (const auto& s : c.shapes) {
        moments->emplace_back(s);
        ckpt_detail::read_floats(in, moments->back(), path);
      }
  }
  if (header.at("has_center").get<bool>()) {
    Tensor<float> ct({header.at("center_dim").get<std::size_t>()});
    ckpt_detail::read_floats(in, ct, path);
    c.center = ct.vec();
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw Error("checkpoint " + path.string() + " has trailing data");
  return c;
}

/// Snapshot of a model (and optionally its optimizer).
inline Checkpoint make_checkpoint(const AnomalyModel<float>& model, const Adam<float>* adam = nullptr) {
  Checkpoint c;
  c.model = model.config();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    c.names.push_back(model.params()[i].name);
    c.shapes.push_back(model.params()[i].value.shape());
    c.values.push_back(model.params()[i].value);
  }
  if (adam) {
    c.step = adam->steps();
    c.adam_m = adam->first_moment();
    c.adam_v = adam->second_moment();
  }
  if (model.center().frozen())
    c.center = std::vector<float>(model.center().values().begin(), model.center().values().end());
  return c;
}

/// Copies the checkpoint state into `model`, refusing on any mismatch in
/// configuration or parameter layout.
inline void restore_model(const Checkpoint& c, AnomalyModel<float>& model) {
  if (model_to_json(c.model) != model_to_json(model.config()))
    throw Error("checkpoint model config " + model_to_json(c.model).dump() +
                " does not match " + model_to_json(model.config()).dump());
  auto& params = model.params();
  if (params.size() != c.names.size())
    throw Error("checkpoint has " + std::to_string(c.names.size()) + " parameters, model has " +
                std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != c.names[i] || params[i].value.shape() != c.shapes[i])
      throw ShapeError("checkpoint parameter " + c.names[i] + " " + shape_string(c.shapes[i]) +
                       " does not match model parameter " + params[i].name + " " +
                       shape_string(params[i].value.shape()));
    params[i].value = c.values[i];
  }
  if (c.center) {
    if (c.center->size() != c.model.z_dim) throw Error("checkpoint center has the wrong dimension");
    model.set_center(Center<float>::frozen_at(*c.center));
  } else if (c.model.method == Method::OneClass) {
    model.set_center(Center<float>());
  }
}

inline AnomalyModel<float> model_from_checkpoint(const Checkpoint& c) {
  AnomalyModel<float> model(c.model);
  restore_model(c, model);
  return model;
}

inline AnomalyModel<float> load_model(const fs::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

inline void restore_adam(const Checkpoint& c, Adam<float>& adam) {
  if (c.adam_m.empty()) throw Error("checkpoint has no optimizer state to resume from");
  if (c.adam_m.size() != adam.first_moment().size())
    throw Error("checkpoint optimizer state does not match the model");
  adam.first_moment() = c.adam_m;
  adam.second_moment() = c.adam_v;
  adam.set_steps(c.step);
}

}  // namespace vadkit
