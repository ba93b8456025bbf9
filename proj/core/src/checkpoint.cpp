#include "speccausal/checkpoint.hpp"

#include "speccausal/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace speccausal {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void Checkpoint::add(NamedArray a) {
  if (a.name.empty() || a.name.size() > 0xffff) throw Error("checkpoint: invalid array name");
  if (contains(a.name)) throw Error("checkpoint: duplicate array '" + a.name + "'");
  arrays_.push_back(std::move(a));
}

void Checkpoint::put(const std::string& name, const Matrix& m) {
  NamedArray a;
  a.name = name;
  a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.f64.assign(m.data(), m.data() + m.size());
  add(std::move(a));
}

void Checkpoint::put(const std::string& name, const Vector& v) {
  NamedArray a;
  a.name = name;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.f64.assign(v.data(), v.data() + v.size());
  add(std::move(a));
}

void Checkpoint::put_scalar(const std::string& name, double x) {
  NamedArray a;
  a.name = name;
  a.f64 = {x};
  add(std::move(a));
}

void Checkpoint::put_ints(const std::string& name, const std::vector<std::int64_t>& v) {
  NamedArray a;
  a.name = name;
  a.type = NamedArray::Type::i64;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.i64 = v;
  add(std::move(a));
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(arrays_.begin(), arrays_.end(), [&](const NamedArray& a) { return a.name == name; });
}

const NamedArray& Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return a;
  }
  throw Error("checkpoint: no array named '" + name + "'");
}

Matrix Checkpoint::matrix(const std::string& name) const {
  const NamedArray& a = find(name);
  if (a.type != NamedArray::Type::f64 || a.dims.size() != 2) throw Error("checkpoint: '" + name + "' is not a matrix");
  Matrix m(static_cast<Eigen::Index>(a.dims[0]), static_cast<Eigen::Index>(a.dims[1]));
  std::copy(a.f64.begin(), a.f64.end(), m.data());
  return m;
}

Vector Checkpoint::vector(const std::string& name) const {
  const NamedArray& a = find(name);
  if (a.type != NamedArray::Type::f64 || a.dims.size() != 1) throw Error("checkpoint: '" + name + "' is not a vector");
  Vector v(static_cast<Eigen::Index>(a.dims[0]));
  std::copy(a.f64.begin(), a.f64.end(), v.data());
  return v;
}

double Checkpoint::scalar(const std::string& name) const {
  const NamedArray& a = find(name);
  if (a.type != NamedArray::Type::f64 || !a.dims.empty()) throw Error("checkpoint: '" + name + "' is not a scalar");
  return a.f64.at(0);
}

std::vector<std::int64_t> Checkpoint::ints(const std::string& name) const {
  const NamedArray& a = find(name);
  if (a.type != NamedArray::Type::i64) throw Error("checkpoint: '" + name + "' is not an integer array");
  return a.i64;
}

namespace {

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("checkpoint: truncated file");
  return v;
}

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic, 8);
  write_pod<std::uint8_t>(os, kCheckpointVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& a : arrays_) {
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(a.type));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) write_pod<std::uint64_t>(os, d);
    if (a.type == NamedArray::Type::f64) {
      os.write(reinterpret_cast<const char*>(a.f64.data()), static_cast<std::streamsize>(a.f64.size() * 8));
    } else {
      os.write(reinterpret_cast<const char*>(a.i64.data()), static_cast<std::streamsize>(a.i64.size() * 8));
    }
  }
  if (!os) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error("checkpoint: bad magic in " + path.string());
  const auto version = read_pod<std::uint8_t>(is);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = read_pod<std::uint32_t>(is);
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    const auto len = read_pod<std::uint16_t>(is);
    a.name.resize(len);
    is.read(a.name.data(), len);
    const auto type = read_pod<std::uint8_t>(is);
    if (type > 1) throw Error("checkpoint: unknown array type in '" + a.name + "'");
    a.type = static_cast<NamedArray::Type>(type);
    const auto ndim = read_pod<std::uint8_t>(is);
    for (std::uint8_t d = 0; d < ndim; ++d) a.dims.push_back(read_pod<std::uint64_t>(is));
    const std::uint64_t n = element_count(a.dims);
    if (n > (std::uint64_t{1} << 34)) throw Error("checkpoint: array '" + a.name + "' is implausibly large");
    if (a.type == NamedArray::Type::f64) {
      a.f64.resize(n);
      is.read(reinterpret_cast<char*>(a.f64.data()), static_cast<std::streamsize>(n * 8));
    } else {
      a.i64.resize(n);
      is.read(reinterpret_cast<char*>(a.i64.data()), static_cast<std::streamsize>(n * 8));
    }
    if (!is) throw Error("checkpoint: truncated data in '" + a.name + "'");
    ck.add(std::move(a));
  }
  return ck;
}

void put_network(Checkpoint& ck, const std::string& prefix, const FeatureNetwork& net) {
  const auto& spec = net.spec();
  ck.put_ints(prefix + ".layer_dims", std::vector<std::int64_t>(spec.layer_dims.begin(), spec.layer_dims.end()));
  std::vector<std::int64_t> acts, bn;
  for (auto a : spec.activations) acts.push_back(static_cast<std::int64_t>(a));
  for (bool b : spec.batch_norm) bn.push_back(b ? 1 : 0);
  ck.put_ints(prefix + ".activations", acts);
  ck.put_ints(prefix + ".batch_norm", bn);
  Vector bn_cfg(2);
  bn_cfg << net.bn_config.momentum, net.bn_config.eps;
  ck.put(prefix + ".bn_config", bn_cfg);
  if (net.input_transform()) {
    ck.put(prefix + ".input_shift", net.input_transform()->first);
    ck.put(prefix + ".input_scale", net.input_transform()->second);
  }
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& p = net.params().layers[l];
    const std::string base = prefix + ".layer" + std::to_string(l);
    ck.put(base + ".weight", p.weight);
    ck.put(base + ".bias", p.bias);
    if (spec.batch_norm[l]) {
      ck.put(base + ".bn_scale", p.bn_scale);
      ck.put(base + ".bn_shift", p.bn_shift);
      ck.put(base + ".running_mean", p.running_mean);
      ck.put(base + ".running_var", p.running_var);
    }
  }
}

FeatureNetwork get_network(const Checkpoint& ck, const std::string& prefix) {
  NetworkSpec spec;
  for (auto d : ck.ints(prefix + ".layer_dims")) spec.layer_dims.push_back(static_cast<int>(d));
  for (auto a : ck.ints(prefix + ".activations")) {
    if (a < 0 || a > 2) throw Error("checkpoint: bad activation code in " + prefix);
    spec.activations.push_back(static_cast<Activation>(a));
  }
  for (auto b : ck.ints(prefix + ".batch_norm")) spec.batch_norm.push_back(b != 0);
  spec.validate();
  FeatureNetwork net(spec, 0);
  const Vector bn_cfg = ck.vector(prefix + ".bn_config");
  net.bn_config.momentum = bn_cfg(0);
  net.bn_config.eps = bn_cfg(1);
  if (ck.contains(prefix + ".input_shift")) {
    net.set_input_transform(ck.vector(prefix + ".input_shift"), ck.vector(prefix + ".input_scale"));
  }
  auto& layers = net.mutable_params().layers;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    auto& p = layers[l];
    Matrix w = ck.matrix(base + ".weight");
    if (w.rows() != p.weight.rows() || w.cols() != p.weight.cols()) {
      throw Error("checkpoint: weight shape mismatch in " + base);
    }
    p.weight = std::move(w);
    p.bias = ck.vector(base + ".bias");
    if (spec.batch_norm[l]) {
      p.bn_scale = ck.vector(base + ".bn_scale");
      p.bn_shift = ck.vector(base + ".bn_shift");
      p.running_mean = ck.vector(base + ".running_mean");
      p.running_var = ck.vector(base + ".running_var");
    }
  }
  net.mark_updated();
  return net;
}

}  // namespace speccausal
