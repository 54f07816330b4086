#pragma once

// Serialization of model specs and parameter sets shared by the binary formats.

#include "binary_io.hpp"
#include "edf/nets.hpp"

namespace edf::io {

inline void write_spec(Writer& w, const nets::ModelSpec& s) {
  w.u32(s.arch == nets::Arch::ConvNet ? 0 : 1);
  for (int v : {s.depth, s.width, s.kernel, s.channels, s.height, s.image_width, s.classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
}

inline nets::ModelSpec read_spec(Reader& r) {
  nets::ModelSpec s;
  const auto arch = r.u32();
  if (arch > 1) throw FormatError("unknown architecture code " + std::to_string(arch));
  s.arch = arch == 0 ? nets::Arch::ConvNet : nets::Arch::Mlp;
  for (int* v : {&s.depth, &s.width, &s.kernel, &s.channels, &s.height, &s.image_width, &s.classes}) {
    *v = static_cast<int>(r.u32());
  }
  return s;
}

inline void write_tensor(Writer& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f32(static_cast<float>(v));
}

inline Tensor read_tensor(Reader& r) {
  Shape shape(r.u32());
  for (auto& d : shape) d = r.u32();
  const std::size_t n = shape_numel(shape);
  if (n * 4 > r.remaining()) throw FormatError("truncated file");
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(r.f32());
  return Tensor(std::move(shape), std::move(v));
}

/// Named f32 tensors; the count is written by the caller.
inline void write_params(Writer& w, const nets::ParamSet& params) {
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.layer));
    write_tensor(w, p.value);
  }
}

inline nets::ParamSet read_params(Reader& r, std::uint32_t count) {
  std::vector<nets::Param> params;
  for (std::uint32_t k = 0; k < count; ++k) {
    nets::Param p;
    p.name = r.str();
    p.layer = static_cast<int>(r.u32());
    p.value = read_tensor(r);
    params.push_back(std::move(p));
  }
  return nets::ParamSet(std::move(params));
}

}  // namespace edf::io
