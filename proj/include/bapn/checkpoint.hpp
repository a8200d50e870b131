#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <map>
#include <string>
#include <vector>

#include "bapn/error.hpp"
#include "bapn/nn/ops.hpp"
#include "bapn/nn/optim.hpp"

namespace bapn {

/// Checkpoint layout, little-endian throughout:
///   "BAPN"  magic
///   u32     version (1)
///   u32     record count
///   records: u32 name length, name bytes, u32 rank, i32 dims...,
///            u64 optimizer step, f32 values, f32 first moments,
///            f32 second moments (moments length = value length; zero for
///            stat records)
namespace detail {

template <typename T>
void put(std::ostream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  require(f.good(), ErrorCode::CheckpointCorrupt, "checkpoint truncated");
  return v;
}

inline void put_f32s(std::ostream& f, const std::vector<double>& xs) {
  for (double x : xs) {
    float v = float(x);
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
}

inline void take_f32s(std::istream& f, std::vector<double>& xs, size_t n) {
  xs.resize(n);
  for (size_t i = 0; i < n; ++i) {
    float v;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    xs[i] = double(v);
  }
  require(f.good(), ErrorCode::CheckpointCorrupt, "checkpoint truncated");
}

}  // namespace detail

struct CheckpointRecord {
  std::string name;
  std::vector<int> dims;
  uint64_t step = 0;
  std::vector<double> values;
  std::vector<double> m;
  std::vector<double> v;
};

inline void save_checkpoint(std::ostream& f, const std::vector<CheckpointRecord>& recs) {
  f.write("BAPN", 4);
  detail::put<uint32_t>(f, 1);
  detail::put<uint32_t>(f, uint32_t(recs.size()));
  for (const auto& r : recs) {
    detail::put<uint32_t>(f, uint32_t(r.name.size()));
    f.write(r.name.data(), std::streamsize(r.name.size()));
    detail::put<uint32_t>(f, uint32_t(r.dims.size()));
    for (int d : r.dims) detail::put<int32_t>(f, d);
    detail::put<uint64_t>(f, r.step);
    require(r.m.size() == r.values.size() && r.v.size() == r.values.size(),
            ErrorCode::Internal, "moment buffers out of step with values");
    detail::put_f32s(f, r.values);
    detail::put_f32s(f, r.m);
    detail::put_f32s(f, r.v);
  }
  require(f.good(), ErrorCode::IoFailure, "checkpoint write failed");
}

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& recs) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::IoFailure, "cannot write " + path);
  save_checkpoint(f, recs);
}

inline std::vector<CheckpointRecord> load_checkpoint(std::istream& f) {
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, "BAPN", 4) == 0, ErrorCode::CheckpointCorrupt,
          "bad magic");
  uint32_t version = detail::take<uint32_t>(f);
  require(version == 1, ErrorCode::CheckpointCorrupt,
          "unsupported version " + std::to_string(version));
  uint32_t count = detail::take<uint32_t>(f);
  std::vector<CheckpointRecord> recs(count);
  for (auto& r : recs) {
    uint32_t len = detail::take<uint32_t>(f);
    require(len <= 4096, ErrorCode::CheckpointCorrupt, "implausible record name");
    r.name.resize(len);
    f.read(r.name.data(), len);
    uint32_t rank = detail::take<uint32_t>(f);
    require(rank <= 8, ErrorCode::CheckpointCorrupt, "implausible tensor rank");
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      int32_t d = detail::take<int32_t>(f);
      require(d >= 0, ErrorCode::CheckpointCorrupt, "negative dimension");
      r.dims.push_back(d);
      n *= size_t(d);
    }
    r.step = detail::take<uint64_t>(f);
    detail::take_f32s(f, r.values, n);
    detail::take_f32s(f, r.m, n);
    detail::take_f32s(f, r.v, n);
  }
  return recs;
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::CheckpointCorrupt, "cannot open " + path);
  return load_checkpoint(f);
}

/// Snapshot every parameter (with Adam moments) and every batch-norm
/// running-stat vector of a model.
template <typename Net>
void save_model(const std::string& path, Net& net) {
  std::vector<CheckpointRecord> recs;
  for (auto* p : net.parameters()) {
    CheckpointRecord r;
    r.name = p->name;
    r.dims = p->t.shape();
    r.step = p->steps;
    r.values = p->t.data();
    r.m = p->m;
    r.v = p->v;
    recs.push_back(std::move(r));
  }
  for (auto& [name, state] : net.bn_states()) {
    CheckpointRecord r;
    r.name = name;
    int c = int(state->running_mean.size());
    r.dims = {2, c};
    r.values = state->running_mean;
    r.values.insert(r.values.end(), state->running_var.begin(), state->running_var.end());
    r.m.assign(r.values.size(), 0.0);
    r.v.assign(r.values.size(), 0.0);
    recs.push_back(std::move(r));
  }
  save_checkpoint(path, recs);
}

/// Restore a model saved by save_model. Every parameter and stat vector
/// must be present with matching shape; extras in the file are rejected.
template <typename Net>
void load_model(const std::string& path, Net& net) {
  std::vector<CheckpointRecord> recs = load_checkpoint(path);
  std::map<std::string, CheckpointRecord*> by_name;
  for (auto& r : recs) {
    require(by_name.emplace(r.name, &r).second, ErrorCode::CheckpointCorrupt,
            "duplicate record " + r.name);
  }
  size_t used = 0;
  for (auto* p : net.parameters()) {
    auto it = by_name.find(p->name);
    require(it != by_name.end(), ErrorCode::CheckpointCorrupt, "missing record " + p->name);
    CheckpointRecord& r = *it->second;
    require(r.dims == p->t.shape(), ErrorCode::CheckpointCorrupt,
            "shape mismatch for " + p->name);
    p->t.data() = r.values;
    p->m = r.m;
    p->v = r.v;
    p->steps = r.step;
    ++used;
  }
  for (auto& [name, state] : net.bn_states()) {
    auto it = by_name.find(name);
    require(it != by_name.end(), ErrorCode::CheckpointCorrupt, "missing record " + name);
    CheckpointRecord& r = *it->second;
    int c = int(state->running_mean.size());
    require(r.dims == std::vector<int>{2, c}, ErrorCode::CheckpointCorrupt,
            "shape mismatch for " + name);
    state->running_mean.assign(r.values.begin(), r.values.begin() + c);
    state->running_var.assign(r.values.begin() + c, r.values.end());
    ++used;
  }
  require(used == recs.size(), ErrorCode::CheckpointCorrupt,
          "checkpoint holds records the model does not declare");
}

}  // namespace bapn
