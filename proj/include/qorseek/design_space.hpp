#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qorseek {

struct LoopInfo {
  std::string id;
  std::int64_t trip_count = 1;
  std::optional<std::string> parent;
  int ops_add = 0;
  int ops_mul = 0;
  std::vector<std::string> arrays_accessed;

  bool operator==(const LoopInfo&) const = default;
};

struct ArrayInfo {
  std::string name;
  std::int64_t num_words = 1;
  int word_bits = 32;

  bool operator==(const ArrayInfo&) const = default;
};

/// A kernel's loop/array structure: the input from which its pragma space is built.
struct KernelDescriptor {
  std::string name;
  std::vector<LoopInfo> loops;
  std::vector<ArrayInfo> arrays;
  double hazard_fraction = 0.0;

  bool operator==(const KernelDescriptor&) const = default;

  std::optional<std::size_t> loop_index(std::string_view id) const;
  std::optional<std::size_t> array_index(std::string_view name) const;
  std::vector<std::size_t> children_of(std::size_t loop) const;
  std::vector<std::size_t> roots() const;
  bool is_innermost(std::size_t loop) const { return children_of(loop).empty(); }
};

/// Throws ValidationError naming the first violated field.
void validate_kernel(const KernelDescriptor& kernel);

/// Line-oriented descriptor format:
///
///   # comment
///   kernel <name>
///   hazard=<real>
///   array <name> words=<n> bits=<n>
///   loop <id> trip=<n> [parent=<id>] add=<n> mul=<n> arrays=<a,b>
///
/// Throws ParseError (with line number) on syntax problems and ValidationError on
/// invariant violations.
KernelDescriptor parse_kernel_descriptor(std::string_view text);
std::string serialize_kernel_descriptor(const KernelDescriptor& kernel);
KernelDescriptor load_kernel_file(const std::filesystem::path& path);

enum class PartitionKind { none, cyclic, block, complete };

std::string_view to_string(PartitionKind kind);
std::optional<PartitionKind> partition_kind_from_string(std::string_view s);

struct LoopPragma {
  std::int64_t unroll_factor = 1;
  bool pipeline = false;
  int ii = 1;  // canonically 1 when pipeline is off

  auto operator<=>(const LoopPragma&) const = default;
};

struct ArrayPragma {
  PartitionKind kind = PartitionKind::none;
  std::int64_t factor = 1;

  auto operator<=>(const ArrayPragma&) const = default;
};

/// One pragma assignment; `loops` and `arrays` are parallel to the kernel's declarations.
struct PragmaConfig {
  std::vector<LoopPragma> loops;
  std::vector<ArrayPragma> arrays;

  auto operator<=>(const PragmaConfig&) const = default;
};

/// Compact canonical text, e.g. "L[u4,p1;u1,-]A[cyclic2]". Used for hashing and file records.
std::string config_key(const PragmaConfig& config);

void validate_config(const KernelDescriptor& kernel, const PragmaConfig& config);
bool is_legal_config(const KernelDescriptor& kernel, const PragmaConfig& config);

struct DesignPoint {
  std::shared_ptr<const KernelDescriptor> kernel;
  PragmaConfig config;
  std::string rendered_code;
  bool dynamic_alloc_flag = false;
};

/// Renders pseudo-HLS source for (kernel, config). Pure and deterministic.
/// Throws ValidationError for an illegal config.
DesignPoint render_design(std::shared_ptr<const KernelDescriptor> kernel, const PragmaConfig& config);

/// Choices for one pragma dimension. A loop contributes an unroll dimension and a
/// pipeline dimension; an array contributes a partition dimension.
struct Dimension {
  enum class Kind { unroll, pipeline, partition };
  Kind kind;
  std::size_t target;  // loop or array index
  std::vector<std::int64_t> unroll_choices;
  std::vector<int> pipeline_choices;  // 0 = off, else II
  std::vector<ArrayPragma> partition_choices;

  std::size_t size() const;
};

inline constexpr std::uint64_t kDefaultSpaceCap = 1'000'000;

/// The finite pragma space of a kernel as a mixed-radix product of dimensions.
/// Index 0 is the all-default config; the last dimension varies fastest.
class DesignSpace {
public:
  explicit DesignSpace(const KernelDescriptor& kernel);

  const std::vector<Dimension>& dimensions() const { return dims_; }
  std::size_t num_loops() const { return num_loops_; }
  std::size_t num_arrays() const { return num_arrays_; }

  /// Number of configs, saturated at UINT64_MAX.
  std::uint64_t size() const { return size_; }

  PragmaConfig decode(const std::vector<std::size_t>& choice_indices) const;
  PragmaConfig config_at(std::uint64_t index) const;
  std::vector<std::size_t> choice_indices(const PragmaConfig& config) const;  // throws if off-grid
  std::uint64_t index_of(const PragmaConfig& config) const;

private:
  std::vector<Dimension> dims_;
  std::size_t num_loops_ = 0;
  std::size_t num_arrays_ = 0;
  std::uint64_t size_ = 1;
};

/// All configs in lexicographic choice order. Throws SpaceOverflowError above `cap`.
std::vector<PragmaConfig> enumerate_space(const KernelDescriptor& kernel,
                                          std::uint64_t cap = kDefaultSpaceCap);

/// Uniform choice per dimension, reproducible from the seed.
PragmaConfig sample_config(const KernelDescriptor& kernel, std::uint64_t rng_seed);

}  // namespace qorseek
