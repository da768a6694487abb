/* Copyright 2026 The SlimSeg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <algorithm>
#include <map>
#include <set>

#include "slimseg/segnet.hpp"

namespace slimseg {
namespace {

constexpr char kMagic[] = "SLSCKPT1";
constexpr std::size_t kMagicLen = 8;
constexpr std::uint32_t kVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

Tensor meta_tensor(std::span<const double> values) {
  return Tensor::from_values({static_cast<std::int64_t>(values.size())}, values, DType::kFloat64);
}

template <typename T>
Tensor meta_tensor(const std::vector<T>& values) {
  std::vector<double> v(values.begin(), values.end());
  return meta_tensor(std::span<const double>(v));
}

Tensor meta_scalar(double value) { return meta_tensor(std::span<const double>(&value, 1)); }

void copy_into(const Tensor& src, Tensor& dst, const std::string& name) {
  if (src.shape() != dst.shape() || src.dtype() != dst.dtype()) {
    throw FormatError("checkpoint tensor " + name + " is " + shape_str(src.shape()) + " " +
                      dtype_name(src.dtype()) + ", model expects " + shape_str(dst.shape()) +
                      " " + dtype_name(dst.dtype()));
  }
  dispatch(src.dtype(), [&]<typename T>() {
    const auto from = src.values<T>();
    std::copy(from.begin(), from.end(), dst.mutable_values<T>().begin());
  });
}

}  // namespace

std::vector<std::uint8_t> encode_tensors(const NamedTensors& items) {
  ByteWriter out;
  out.raw(kMagic, kMagicLen);
  out.put<std::uint32_t>(kVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    out.text(name);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    out.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) out.put<std::uint64_t>(static_cast<std::uint64_t>(d));
  }
  for (const auto& [name, t] : items) {
    dispatch(t.dtype(), [&]<typename T>() {
      const auto v = t.values<T>();
      out.raw(v.data(), v.size_bytes());
    });
  }
  return std::move(out.bytes());
}

NamedTensors decode_tensors(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes, "checkpoint");
  if (in.remaining() < kMagicLen || in.text(kMagicLen) != std::string(kMagic, kMagicLen)) {
    throw FormatError("checkpoint: bad magic (expected SLSCKPT1)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  struct Entry {
    std::string name;
    DType dtype;
    Shape shape;
  };
  std::vector<Entry> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = in.text(in.get<std::uint32_t>());
    const auto code = in.get<std::uint8_t>();
    if (code > 1) throw FormatError("checkpoint: unknown dtype code " + std::to_string(code));
    e.dtype = static_cast<DType>(code);
    const auto rank = in.get<std::uint8_t>();
    for (std::uint8_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<std::int64_t>(in.get<std::uint64_t>()));
    }
    manifest.push_back(std::move(e));
  }
  NamedTensors out;
  for (const auto& e : manifest) {
    Tensor t = Tensor::zeros(e.shape, e.dtype);
    dispatch(e.dtype, [&]<typename T>() {
      auto v = t.mutable_values<T>();
      in.raw(v.data(), v.size_bytes());
    });
    out.emplace_back(e.name, std::move(t));
  }
  if (in.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return out;
}

std::vector<std::uint8_t> checkpoint_bytes(SlimSegModel& model) {
  const SegNetConfig& c = model.config();
  NamedTensors items;
  items.emplace_back("meta/num_classes", meta_scalar(static_cast<double>(c.num_classes)));
  items.emplace_back("meta/stage_channels", meta_tensor(c.stage_channels));
  items.emplace_back("meta/ppm_bins", meta_tensor(c.ppm_bins));
  items.emplace_back("meta/widths", meta_tensor(c.widths));
  items.emplace_back("meta/input_channels", meta_scalar(static_cast<double>(c.input_channels)));
  items.emplace_back("meta/decoder_channels",
                     meta_scalar(static_cast<double>(c.decoder_channels)));
  items.emplace_back("meta/dtype", meta_scalar(static_cast<double>(c.dtype)));
  items.emplace_back("meta/has_boundary", meta_scalar(model.has_boundary_head() ? 1.0 : 0.0));
  for (const auto& p : model.parameters()) items.emplace_back(p.name, p.tensor);
  for (const auto& s : model.running_stats()) {
    items.emplace_back(s.name + ".running_mean", s.stats->mean);
    items.emplace_back(s.name + ".running_var", s.stats->var);
    items.emplace_back(s.name + ".tracked", meta_scalar(s.stats->initialized ? 1.0 : 0.0));
  }
  return encode_tensors(items);
}

SlimSegModel model_from_tensors(const NamedTensors& items) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : items) {
    if (!by_name.emplace(name, t).second) {
      throw FormatError("checkpoint: duplicate tensor " + name);
    }
  }
  std::set<std::string> used;
  auto take = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
    used.insert(name);
    return it->second;
  };
  auto ints = [&](const std::string& name) {
    std::vector<std::int64_t> v;
    for (double x : take(name).to_vector()) v.push_back(static_cast<std::int64_t>(x));
    return v;
  };
  auto scalar = [&](const std::string& name) { return take(name).item(); };

  SegNetConfig c;
  c.num_classes = static_cast<std::int64_t>(scalar("meta/num_classes"));
  c.stage_channels = ints("meta/stage_channels");
  c.ppm_bins = ints("meta/ppm_bins");
  c.widths = take("meta/widths").to_vector();
  c.input_channels = static_cast<std::int64_t>(scalar("meta/input_channels"));
  c.decoder_channels = static_cast<std::int64_t>(scalar("meta/decoder_channels"));
  const double dt = scalar("meta/dtype");
  if (dt != 0.0 && dt != 1.0) throw FormatError("checkpoint: bad meta/dtype");
  c.dtype = static_cast<DType>(static_cast<int>(dt));
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: invalid model config: ") + e.what());
  }

  SlimSegModel model(c);
  if (scalar("meta/has_boundary") == 0.0) model.strip_boundary_head();
  for (auto& p : model.parameters()) copy_into(take(p.name), p.tensor, p.name);
  for (auto& s : model.running_stats()) {
    copy_into(take(s.name + ".running_mean"), s.stats->mean, s.name + ".running_mean");
    copy_into(take(s.name + ".running_var"), s.stats->var, s.name + ".running_var");
    s.stats->initialized = scalar(s.name + ".tracked") != 0.0;
  }
  for (const auto& [name, t] : by_name) {
    if (!used.count(name)) throw FormatError("checkpoint: unexpected tensor " + name);
  }
  return model;
}

SlimSegModel model_from_checkpoint_bytes(const std::vector<std::uint8_t>& bytes) {
  return model_from_tensors(decode_tensors(bytes));
}

void save_checkpoint(SlimSegModel& model, const std::string& path) {
  write_file(path, checkpoint_bytes(model));
}

SlimSegModel load_checkpoint(const std::string& path) {
  return model_from_checkpoint_bytes(read_file(path));
}

}  // namespace slimseg
