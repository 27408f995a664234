#include "flygm/persistence.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace flygm {

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

class Writer {
 public:
  void u8(uint8_t x) { buf_.push_back(x); }
  void u32(uint32_t x) {
    for (int i = 0; i < 4; ++i) buf_.push_back(uint8_t(x >> (8 * i)));
  }
  void u64(uint64_t x) {
    for (int i = 0; i < 8; ++i) buf_.push_back(uint8_t(x >> (8 * i)));
  }
  void i32(int32_t x) { u32(uint32_t(x)); }
  void i64(int64_t x) { u64(uint64_t(x)); }
  void f32(float x) {
    uint32_t b;
    std::memcpy(&b, &x, 4);
    u32(b);
  }
  void f64(double x) {
    uint64_t b;
    std::memcpy(&b, &x, 8);
    u64(b);
  }
  void bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str32(std::string_view s) {
    u32(uint32_t(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  // appends the CRC of everything written so far, then writes the file
  void finish(const std::string& path) {
    const uint32_t c = crc32(buf_);
    u32(c);
    write_file_atomic(path, buf_);
  }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::vector<uint8_t> bytes, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {}

  // validates magic + trailing CRC, leaves the cursor after the magic
  void open(std::string_view magic, std::string_view kind) {
    if (buf_.size() < magic.size() + 4 ||
        std::string_view(reinterpret_cast<const char*>(buf_.data()), magic.size()) != magic)
      throw DataError(what_ + ": not a " + std::string(kind) + " file");
    const uint32_t stored = peek_u32(buf_.size() - 4);
    const uint32_t actual = crc32(std::span<const uint8_t>(buf_.data(), buf_.size() - 4));
    if (stored != actual) throw DataError(what_ + ": checksum mismatch, file is corrupted");
    end_ = buf_.size() - 4;
    pos_ = magic.size();
  }

  uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  uint32_t u32() {
    need(4);
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= uint32_t(buf_[pos_ + size_t(i)]) << (8 * i);
    pos_ += 4;
    return x;
  }
  uint64_t u64() {
    need(8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= uint64_t(buf_[pos_ + size_t(i)]) << (8 * i);
    pos_ += 8;
    return x;
  }
  int32_t i32() { return int32_t(u32()); }
  int64_t i64() { return int64_t(u64()); }
  float f32() {
    uint32_t b = u32();
    float x;
    std::memcpy(&x, &b, 4);
    return x;
  }
  double f64() {
    uint64_t b = u64();
    double x;
    std::memcpy(&x, &b, 8);
    return x;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(buf_.begin() + long(pos_), buf_.begin() + long(pos_ + n));
    pos_ += n;
    return out;
  }
  std::string str32() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == end_; }
  void expect_end() const {
    if (pos_ != end_) throw DataError(what_ + ": trailing bytes after the payload");
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > end_) throw DataError(what_ + ": truncated payload");
  }
  std::vector<uint8_t> buf_;
  std::string what_;
  size_t pos_ = 0, end_ = 0;

  uint32_t peek_u32(size_t at) const {
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= uint32_t(buf_[at + size_t(i)]) << (8 * i);
    return x;
  }
};

constexpr uint32_t kFormatVersion = 1;

}  // namespace

uint32_t crc32(std::span<const uint8_t> bytes) {
  static const auto table = make_crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (uint8_t b : bytes) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open file");
  in.seekg(0, std::ios::end);
  const auto len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw DataError(path + ": read failed");
  return buf;
}

void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(tmp + ": cannot open file for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw DataError(tmp + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError(path + ": rename failed: " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span<const uint8_t>(
                              reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors,
                  std::string_view magic) {
  Writer w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(magic.data()), magic.size()));
  w.u32(kFormatVersion);
  w.u32(uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    w.str32(t.name);
    w.u8(uint8_t(t.dtype));
    w.u8(uint8_t(t.dims.size()));
    for (uint64_t d : t.dims) w.u64(d);
    if (t.raw.size() != t.elem_count() * dtype_size(t.dtype))
      throw std::logic_error("save_tensors: payload does not match dims for " + t.name);
    w.bytes(t.raw);
  }
  w.finish(path);
}

std::vector<NamedTensor> load_tensors(const std::string& path, std::string_view magic) {
  Reader r(read_file_bytes(path), path);
  r.open(magic, magic == "FGM1" ? "checkpoint" : "tensor container");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError(path + ": unsupported format version " + std::to_string(version));
  const uint32_t n = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str32();
    const uint8_t dt = r.u8();
    if (dt > 1) throw DataError(path + ": unknown dtype for tensor " + t.name);
    t.dtype = Dtype(dt);
    const uint8_t rank = r.u8();
    for (uint8_t k = 0; k < rank; ++k) t.dims.push_back(r.u64());
    t.raw = r.bytes(size_t(t.elem_count() * dtype_size(t.dtype)));
    out.push_back(std::move(t));
  }
  r.expect_end();
  return out;
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& ts, std::string_view name) {
  for (const auto& t : ts)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& require_tensor(const std::vector<NamedTensor>& ts, std::string_view name) {
  const NamedTensor* t = find_tensor(ts, name);
  if (!t) throw DataError("checkpoint is missing tensor " + std::string(name));
  return *t;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  Writer w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>("FGD1"), 4));
  w.u32(kFormatVersion);
  w.str32(ds.env_name);
  w.i32(ds.obs_dim);
  w.i32(ds.act_dim);
  w.i32(ds.cmd_dim);
  w.f64(ds.dt);
  w.i32(ds.episode_len);
  w.u32(uint32_t(ds.episodes.size()));
  for (const auto& ep : ds.episodes) {
    if (int32_t(ep.command.size()) != ds.cmd_dim)
      throw std::logic_error("save_dataset: episode command width mismatch");
    for (double c : ep.command) w.f64(c);
    w.u32(uint32_t(ep.length));
    const size_t t_len = size_t(ep.length);
    if (ep.obs.size() != t_len * size_t(ds.obs_dim) ||
        ep.action.size() != t_len * size_t(ds.act_dim) ||
        ep.expert_mu.size() != t_len * size_t(ds.act_dim) ||
        ep.expert_sigma.size() != t_len * size_t(ds.act_dim) || ep.reward.size() != t_len ||
        ep.done.size() != t_len)
      throw std::logic_error("save_dataset: episode buffers do not match its length");
    for (size_t t = 0; t < t_len; ++t) {
      for (int i = 0; i < ds.obs_dim; ++i) w.f32(float(ep.obs[t * size_t(ds.obs_dim) + i]));
      for (int i = 0; i < ds.act_dim; ++i) w.f32(float(ep.action[t * size_t(ds.act_dim) + i]));
      for (int i = 0; i < ds.act_dim; ++i) w.f32(float(ep.expert_mu[t * size_t(ds.act_dim) + i]));
      for (int i = 0; i < ds.act_dim; ++i)
        w.f32(float(ep.expert_sigma[t * size_t(ds.act_dim) + i]));
      w.f32(float(ep.reward[t]));
      w.u8(ep.done[t]);
    }
  }
  w.finish(path);
}

Dataset load_dataset(const std::string& path) {
  Reader r(read_file_bytes(path), path);
  r.open("FGD1", "demonstration dataset");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError(path + ": unsupported format version " + std::to_string(version));
  Dataset ds;
  ds.env_name = r.str32();
  ds.obs_dim = r.i32();
  ds.act_dim = r.i32();
  ds.cmd_dim = r.i32();
  ds.dt = r.f64();
  ds.episode_len = r.i32();
  if (ds.obs_dim <= 0 || ds.act_dim <= 0 || ds.cmd_dim <= 0)
    throw DataError(path + ": non-positive dims in the dataset header");
  const uint32_t n_ep = r.u32();
  ds.episodes.reserve(n_ep);
  for (uint32_t e = 0; e < n_ep; ++e) {
    DatasetEpisode ep;
    for (int i = 0; i < ds.cmd_dim; ++i) ep.command.push_back(r.f64());
    ep.length = int32_t(r.u32());
    const size_t t_len = size_t(ep.length);
    ep.obs.reserve(t_len * size_t(ds.obs_dim));
    ep.action.reserve(t_len * size_t(ds.act_dim));
    ep.expert_mu.reserve(t_len * size_t(ds.act_dim));
    ep.expert_sigma.reserve(t_len * size_t(ds.act_dim));
    for (size_t t = 0; t < t_len; ++t) {
      for (int i = 0; i < ds.obs_dim; ++i) ep.obs.push_back(double(r.f32()));
      for (int i = 0; i < ds.act_dim; ++i) ep.action.push_back(double(r.f32()));
      for (int i = 0; i < ds.act_dim; ++i) ep.expert_mu.push_back(double(r.f32()));
      for (int i = 0; i < ds.act_dim; ++i) ep.expert_sigma.push_back(double(r.f32()));
      ep.reward.push_back(double(r.f32()));
      ep.done.push_back(r.u8());
    }
    ds.episodes.push_back(std::move(ep));
  }
  r.expect_end();
  return ds;
}

void save_recording(const std::string& path, const StateRecording& rec) {
  if (rec.data.size() != size_t(rec.t_steps) * size_t(rec.n_neurons) * size_t(rec.channels))
    throw std::logic_error("save_recording: data does not match T x N x C");
  if (int32_t(rec.flow.size()) != rec.n_neurons ||
      int32_t(rec.superclass.size()) != rec.n_neurons)
    throw std::logic_error("save_recording: neuron labels do not match N");
  Writer w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>("FGR1"), 4));
  w.u32(kFormatVersion);
  w.i32(rec.t_steps);
  w.i32(rec.n_neurons);
  w.i32(rec.channels);
  for (int32_t n = 0; n < rec.n_neurons; ++n) {
    w.u8(rec.flow[size_t(n)]);
    w.str32(rec.superclass[size_t(n)]);
  }
  for (double x : rec.data) w.f32(float(x));
  w.finish(path);
}

StateRecording load_recording(const std::string& path) {
  Reader r(read_file_bytes(path), path);
  r.open("FGR1", "state recording");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError(path + ": unsupported format version " + std::to_string(version));
  StateRecording rec;
  rec.t_steps = r.i32();
  rec.n_neurons = r.i32();
  rec.channels = r.i32();
  if (rec.t_steps < 0 || rec.n_neurons <= 0 || rec.channels <= 0)
    throw DataError(path + ": bad recording dims");
  for (int32_t n = 0; n < rec.n_neurons; ++n) {
    rec.flow.push_back(r.u8());
    rec.superclass.push_back(r.str32());
  }
  const size_t count = size_t(rec.t_steps) * size_t(rec.n_neurons) * size_t(rec.channels);
  rec.data.reserve(count);
  for (size_t i = 0; i < count; ++i) rec.data.push_back(double(r.f32()));
  r.expect_end();
  return rec;
}

void save_operator(const std::string& path, const CsrMatrix& m) {
  Writer w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>("FGO1"), 4));
  w.u32(kFormatVersion);
  w.i32(m.rows);
  w.i32(m.cols);
  w.u64(uint64_t(m.nnz()));
  for (int64_t p : m.row_ptr) w.i64(p);
  for (int32_t c : m.col_idx) w.i32(c);
  for (double v : m.val) w.f64(v);
  w.finish(path);
}

CsrMatrix load_operator(const std::string& path) {
  Reader r(read_file_bytes(path), path);
  r.open("FGO1", "operator cache");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError(path + ": unsupported format version " + std::to_string(version));
  CsrMatrix m;
  m.rows = r.i32();
  m.cols = r.i32();
  const uint64_t nnz = r.u64();
  if (m.rows < 0 || m.cols < 0) throw DataError(path + ": bad operator dims");
  m.row_ptr.reserve(size_t(m.rows) + 1);
  for (int32_t i = 0; i <= m.rows; ++i) m.row_ptr.push_back(r.i64());
  for (uint64_t i = 0; i < nnz; ++i) m.col_idx.push_back(r.i32());
  for (uint64_t i = 0; i < nnz; ++i) m.val.push_back(r.f64());
  r.expect_end();
  if (m.row_ptr.empty() || m.row_ptr.front() != 0 || uint64_t(m.row_ptr.back()) != nnz)
    throw DataError(path + ": inconsistent operator index");
  for (size_t i = 1; i < m.row_ptr.size(); ++i)
    if (m.row_ptr[i] < m.row_ptr[i - 1]) throw DataError(path + ": inconsistent operator index");
  for (int32_t c : m.col_idx)
    if (c < 0 || c >= m.cols) throw DataError(path + ": operator column out of range");
  m.build_transpose();
  return m;
}

}  // namespace flygm
