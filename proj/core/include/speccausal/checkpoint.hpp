#pragma once

#include "speccausal/linalg.hpp"
#include "speccausal/neuralnet.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace speccausal {

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'E', 'C', 'C', 'A', 'U', 'S'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct NamedArray {
  enum class Type : std::uint8_t { f64 = 0, i64 = 1 };
  std::string name;
  Type type = Type::f64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
};

// Ordered collection of named typed arrays; layout documented in docs/checkpoint_format.md.
class Checkpoint {
 public:
  void put(const std::string& name, const Matrix& m);
  void put(const std::string& name, const Vector& v);
  void put_scalar(const std::string& name, double x);
  void put_ints(const std::string& name, const std::vector<std::int64_t>& v);

  bool contains(const std::string& name) const;
  Matrix matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;
  double scalar(const std::string& name) const;
  std::vector<std::int64_t> ints(const std::string& name) const;

  const std::vector<NamedArray>& arrays() const { return arrays_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  const NamedArray& find(const std::string& name) const;
  void add(NamedArray a);
  std::vector<NamedArray> arrays_;
};

void put_network(Checkpoint& ck, const std::string& prefix, const FeatureNetwork& net);
FeatureNetwork get_network(const Checkpoint& ck, const std::string& prefix);

}  // namespace speccausal
