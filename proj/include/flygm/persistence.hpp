#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flygm/csr.hpp"
#include "flygm/env.hpp"
#include "flygm/optim.hpp"
#include "flygm/policy.hpp"
#include "flygm/types.hpp"

namespace flygm {

uint32_t crc32(std::span<const uint8_t> bytes);

enum class Dtype : uint8_t { F32 = 0, F64 = 1 };

inline size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

template <typename T>
constexpr Dtype dtype_of() {
  return sizeof(T) == 4 ? Dtype::F32 : Dtype::F64;
}

struct NamedTensor {
  std::string name;
  Dtype dtype = Dtype::F64;
  std::vector<uint64_t> dims;
  std::vector<uint8_t> raw;  // row-major little-endian payload

  uint64_t elem_count() const {
    uint64_t n = 1;
    for (uint64_t d : dims) n *= d;
    return n;
  }

  static NamedTensor scalar(std::string name, double x) {
    NamedTensor t;
    t.name = std::move(name);
    t.dtype = Dtype::F64;
    t.raw.resize(8);
    std::memcpy(t.raw.data(), &x, 8);
    return t;
  }

  static NamedTensor vec(std::string name, std::span<const double> x) {
    NamedTensor t;
    t.name = std::move(name);
    t.dtype = Dtype::F64;
    t.dims = {uint64_t(x.size())};
    t.raw.resize(x.size() * 8);
    std::memcpy(t.raw.data(), x.data(), t.raw.size());
    return t;
  }

  template <typename T>
  static NamedTensor matrix(std::string name, const Tensor2<T>& m) {
    NamedTensor t;
    t.name = std::move(name);
    t.dtype = dtype_of<T>();
    t.dims = {uint64_t(m.rows), uint64_t(m.cols)};
    t.raw.resize(m.data.size() * sizeof(T));
    std::memcpy(t.raw.data(), m.data.data(), t.raw.size());
    return t;
  }

  double as_scalar() const {
    if (!dims.empty() || dtype != Dtype::F64 || raw.size() != 8)
      throw DataError("checkpoint tensor " + name + " is not a scalar");
    double x;
    std::memcpy(&x, raw.data(), 8);
    return x;
  }

  std::vector<double> as_f64() const {
    std::vector<double> out(elem_count());
    if (dtype == Dtype::F64) {
      std::memcpy(out.data(), raw.data(), out.size() * 8);
    } else {
      for (size_t i = 0; i < out.size(); ++i) {
        float f;
        std::memcpy(&f, raw.data() + i * 4, 4);
        out[i] = double(f);
      }
    }
    return out;
  }

  template <typename T>
  Tensor2<T> as_matrix() const {
    if (dims.size() != 2) throw DataError("checkpoint tensor " + name + " is not rank 2");
    if (dtype != dtype_of<T>())
      throw DataError("checkpoint tensor " + name + " has the wrong precision");
    Tensor2<T> m(static_cast<int32_t>(dims[0]), static_cast<int32_t>(dims[1]));
    if (raw.size() != m.data.size() * sizeof(T))
      throw DataError("checkpoint tensor " + name + " payload size mismatch");
    std::memcpy(m.data.data(), raw.data(), raw.size());
    return m;
  }
};

// little-endian named-tensor container with a trailing CRC32
void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors,
                  std::string_view magic = "FGM1");
std::vector<NamedTensor> load_tensors(const std::string& path, std::string_view magic = "FGM1");

const NamedTensor* find_tensor(const std::vector<NamedTensor>& ts, std::string_view name);
const NamedTensor& require_tensor(const std::vector<NamedTensor>& ts, std::string_view name);

// checkpoint glue: param.<name>, norm.{mean,m2,count,eps,frozen},
// meta.{kind,obs_dim,act_dim}; optimizer state rides along as
// opt.{m,v}.<name> plus opt.step
namespace detail {

template <typename T>
void append_params(std::vector<NamedTensor>& out, const std::string& prefix,
                   const ParamSet<T>& ps) {
  for (const auto& e : ps.entries) out.push_back(NamedTensor::matrix(prefix + e.name, e.value));
}

template <typename T>
void append_adam(std::vector<NamedTensor>& out, const ParamSet<T>& ps, const AdamState<T>& st) {
  for (int i = 0; i < ps.size(); ++i) {
    out.push_back(NamedTensor::matrix("opt.m." + ps.entries[size_t(i)].name, st.m[size_t(i)]));
    out.push_back(NamedTensor::matrix("opt.v." + ps.entries[size_t(i)].name, st.v[size_t(i)]));
  }
  out.push_back(NamedTensor::scalar("opt.step", double(st.t)));
}

template <typename T>
void load_params(ParamSet<T>& ps, const std::vector<NamedTensor>& ts, const std::string& prefix) {
  std::vector<Tensor2<T>> staged(size_t(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const auto& name = ps.entries[size_t(i)].name;
    const NamedTensor& t = require_tensor(ts, prefix + name);
    staged[size_t(i)] = t.template as_matrix<T>();
    const auto& cur = ps[i];
    if (staged[size_t(i)].rows != cur.rows || staged[size_t(i)].cols != cur.cols)
      throw DataError("checkpoint tensor " + prefix + name + " has shape " +
                      std::to_string(staged[size_t(i)].rows) + "x" +
                      std::to_string(staged[size_t(i)].cols) + ", expected " +
                      std::to_string(cur.rows) + "x" + std::to_string(cur.cols));
  }
  for (int i = 0; i < ps.size(); ++i) ps[i] = std::move(staged[size_t(i)]);
}

template <typename T>
void load_adam(AdamState<T>& st, const ParamSet<T>& ps, const std::vector<NamedTensor>& ts) {
  AdamState<T> staged;
  staged.init_like(ps);
  for (int i = 0; i < ps.size(); ++i) {
    const auto& name = ps.entries[size_t(i)].name;
    staged.m[size_t(i)] = require_tensor(ts, "opt.m." + name).template as_matrix<T>();
    staged.v[size_t(i)] = require_tensor(ts, "opt.v." + name).template as_matrix<T>();
    if (!staged.m[size_t(i)].same_shape(ps[i]) || !staged.v[size_t(i)].same_shape(ps[i]))
      throw DataError("checkpoint optimizer state for " + name + " has the wrong shape");
  }
  staged.t = int64_t(require_tensor(ts, "opt.step").as_scalar());
  st = std::move(staged);
}

inline void append_norm(std::vector<NamedTensor>& out, const RunningNorm& n) {
  out.push_back(NamedTensor::vec("norm.mean", n.mean()));
  out.push_back(NamedTensor::vec("norm.m2", n.m2()));
  out.push_back(NamedTensor::scalar("norm.count", double(n.count())));
  out.push_back(NamedTensor::scalar("norm.eps", n.eps()));
  out.push_back(NamedTensor::scalar("norm.frozen", n.frozen() ? 1.0 : 0.0));
}

inline void load_norm(RunningNorm& n, const std::vector<NamedTensor>& ts, int expect_dim) {
  auto mean = require_tensor(ts, "norm.mean").as_f64();
  auto m2 = require_tensor(ts, "norm.m2").as_f64();
  if (int(mean.size()) != expect_dim || int(m2.size()) != expect_dim)
    throw DataError("checkpoint normalizer width does not match the policy");
  n.restore(std::move(mean), std::move(m2),
            int64_t(require_tensor(ts, "norm.count").as_scalar()),
            require_tensor(ts, "norm.eps").as_scalar(),
            require_tensor(ts, "norm.frozen").as_scalar() != 0.0);
}

}  // namespace detail

inline double policy_kind_code(std::string_view kind) {
  if (kind == "flygm") return 0.0;
  if (kind == "mlp") return 1.0;
  return -1.0;
}

template <typename T>
std::vector<NamedTensor> policy_state_tensors(const PolicyModel<T>& policy,
                                              const AdamState<T>* adam = nullptr) {
  std::vector<NamedTensor> out;
  out.push_back(NamedTensor::scalar("meta.kind", policy_kind_code(policy.kind())));
  out.push_back(NamedTensor::scalar("meta.obs_dim", double(policy.obs_dim())));
  out.push_back(NamedTensor::scalar("meta.act_dim", double(policy.act_dim())));
  detail::append_params(out, "param.", policy.params);
  detail::append_norm(out, policy.norm);
  if (adam) detail::append_adam(out, policy.params, *adam);
  return out;
}

template <typename T>
void load_policy_state(PolicyModel<T>& policy, const std::vector<NamedTensor>& ts,
                       AdamState<T>* adam = nullptr) {
  if (require_tensor(ts, "meta.kind").as_scalar() != policy_kind_code(policy.kind()))
    throw DataError("checkpoint was written by a different policy kind");
  if (int(require_tensor(ts, "meta.obs_dim").as_scalar()) != policy.obs_dim() ||
      int(require_tensor(ts, "meta.act_dim").as_scalar()) != policy.act_dim())
    throw DataError("checkpoint interface dims do not match the policy");
  detail::load_params(policy.params, ts, "param.");
  detail::load_norm(policy.norm, ts, policy.obs_dim());
  if (adam) detail::load_adam(*adam, policy.params, ts);
  policy.reset_state();
}

template <typename T>
std::vector<NamedTensor> value_state_tensors(const ValueNet<T>& value,
                                             const AdamState<T>* adam = nullptr) {
  std::vector<NamedTensor> out;
  out.push_back(NamedTensor::scalar("meta.kind", 2.0));
  out.push_back(NamedTensor::scalar("meta.obs_dim", double(value.input_dim())));
  detail::append_params(out, "param.", value.params);
  if (adam) detail::append_adam(out, value.params, *adam);
  return out;
}

template <typename T>
void load_value_state(ValueNet<T>& value, const std::vector<NamedTensor>& ts,
                      AdamState<T>* adam = nullptr) {
  if (require_tensor(ts, "meta.kind").as_scalar() != 2.0)
    throw DataError("checkpoint does not hold a value function");
  if (int(require_tensor(ts, "meta.obs_dim").as_scalar()) != value.input_dim())
    throw DataError("checkpoint interface dims do not match the value function");
  detail::load_params(value.params, ts, "param.");
  if (adam) detail::load_adam(*adam, value.params, ts);
}

template <typename T>
void save_checkpoint(const std::string& path, const PolicyModel<T>& policy,
                     const AdamState<T>* adam = nullptr) {
  save_tensors(path, policy_state_tensors(policy, adam));
}

// expert demonstration container, f32 step records
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// per-step controller state recording plus neuron labels
struct StateRecording {
  int32_t t_steps = 0, n_neurons = 0, channels = 0;
  std::vector<double> data;  // T x N x C
  std::vector<uint8_t> flow;  // FlowClass per neuron
  std::vector<std::string> superclass;

  double at(int t, int n, int c) const {
    return data[(size_t(t) * size_t(n_neurons) + size_t(n)) * size_t(channels) + size_t(c)];
  }
};

void save_recording(const std::string& path, const StateRecording& rec);
StateRecording load_recording(const std::string& path);

// cached signed operator (CSR)
void save_operator(const std::string& path, const CsrMatrix& m);
CsrMatrix load_operator(const std::string& path);

// whole-file helpers; writes go through a temp file and an atomic rename
std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes);
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace flygm
