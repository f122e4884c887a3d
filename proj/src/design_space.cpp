#include "qorseek/design_space.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "qorseek/common.hpp"

namespace qorseek {

namespace {

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto ok_first = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  auto ok_rest = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  if (!ok_first(s.front())) return false;
  return std::all_of(s.begin() + 1, s.end(), ok_rest);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string_view::npos) comma = s.size();
    if (comma > start) out.emplace_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view v, std::size_t line, std::string_view key) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ParseError(line, "expected integer for '" + std::string(key) + "', got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view v, std::size_t line, std::string_view key) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ParseError(line, "expected number for '" + std::string(key) + "', got '" + std::string(v) + "'");
  return out;
}

std::pair<std::string_view, std::string_view> split_kv(std::string_view word, std::size_t line) {
  const auto eq = word.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ParseError(line, "expected key=value, got '" + std::string(word) + "'");
  return {word.substr(0, eq), word.substr(eq + 1)};
}

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

std::string_view c_type_for_bits(int bits) {
  switch (bits) {
    case 8: return "char";
    case 16: return "short";
    case 64: return "long";
    default: return "int";
  }
}

}  // namespace

std::optional<std::size_t> KernelDescriptor::loop_index(std::string_view id) const {
  for (std::size_t i = 0; i < loops.size(); ++i)
    if (loops[i].id == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> KernelDescriptor::array_index(std::string_view n) const {
  for (std::size_t i = 0; i < arrays.size(); ++i)
    if (arrays[i].name == n) return i;
  return std::nullopt;
}

std::vector<std::size_t> KernelDescriptor::children_of(std::size_t loop) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < loops.size(); ++i)
    if (loops[i].parent && *loops[i].parent == loops[loop].id) out.push_back(i);
  return out;
}

std::vector<std::size_t> KernelDescriptor::roots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < loops.size(); ++i)
    if (!loops[i].parent) out.push_back(i);
  return out;
}

void validate_kernel(const KernelDescriptor& k) {
  if (!is_identifier(k.name)) throw ValidationError("kernel.name", "'" + k.name + "' is not an identifier");
  if (!(k.hazard_fraction >= 0.0 && k.hazard_fraction <= 1.0))
    throw ValidationError("hazard", "must lie in [0, 1]");
  if (k.loops.empty()) throw ValidationError("loops", "kernel declares no loops");

  std::set<std::string> names;
  for (const auto& a : k.arrays) {
    const std::string f = "array '" + a.name + "'";
    if (!is_identifier(a.name)) throw ValidationError(f + ".name", "not an identifier");
    if (!names.insert(a.name).second) throw ValidationError(f + ".name", "duplicate array name");
    if (a.num_words < 1) throw ValidationError(f + ".words", "must be >= 1");
    if (a.word_bits != 8 && a.word_bits != 16 && a.word_bits != 32 && a.word_bits != 64)
      throw ValidationError(f + ".bits", "must be one of 8, 16, 32, 64");
  }

  std::set<std::string> ids;
  for (const auto& l : k.loops) {
    const std::string f = "loop '" + l.id + "'";
    if (!is_identifier(l.id)) throw ValidationError(f + ".id", "not an identifier");
    if (!ids.insert(l.id).second) throw ValidationError(f + ".id", "duplicate loop id");
    if (l.trip_count < 1) throw ValidationError(f + ".trip", "must be >= 1");
    if (l.ops_add < 0) throw ValidationError(f + ".add", "must be >= 0");
    if (l.ops_mul < 0) throw ValidationError(f + ".mul", "must be >= 0");
    std::set<std::string> seen;
    for (const auto& a : l.arrays_accessed) {
      if (!k.array_index(a)) throw ValidationError(f + ".arrays", "references undeclared array '" + a + "'");
      if (!seen.insert(a).second) throw ValidationError(f + ".arrays", "lists array '" + a + "' twice");
    }
  }

  for (const auto& l : k.loops) {
    if (!l.parent) continue;
    if (!k.loop_index(*l.parent))
      throw ValidationError("loop '" + l.id + "'.parent", "unknown loop '" + *l.parent + "'");
    // Walk up; a chain longer than the loop count means a cycle.
    std::size_t hops = 0;
    std::optional<std::string> cur = l.parent;
    while (cur) {
      if (++hops > k.loops.size() || *cur == l.id)
        throw ValidationError("loop '" + l.id + "'.parent", "parent chain is cyclic");
      cur = k.loops[*k.loop_index(*cur)].parent;
    }
  }
}

KernelDescriptor parse_kernel_descriptor(std::string_view text) {
  KernelDescriptor k;
  bool have_kernel = false;
  bool have_hazard = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto words = split_ws(line);
    if (words.empty()) continue;

    const std::string_view head = words[0];
    if (head == "kernel") {
      if (have_kernel) throw ParseError(line_no, "duplicate 'kernel' line");
      if (words.size() != 2) throw ParseError(line_no, "expected 'kernel <name>'");
      k.name = std::string(words[1]);
      have_kernel = true;
    } else if (head.starts_with("hazard")) {
      if (words.size() != 1) throw ParseError(line_no, "expected 'hazard=<real>'");
      auto [key, value] = split_kv(head, line_no);
      if (key != "hazard") throw ParseError(line_no, "unknown directive '" + std::string(key) + "'");
      if (have_hazard) throw ParseError(line_no, "duplicate 'hazard' line");
      k.hazard_fraction = parse_real(value, line_no, key);
      have_hazard = true;
    } else if (head == "array") {
      if (words.size() < 2) throw ParseError(line_no, "expected 'array <name> words=<n> bits=<n>'");
      ArrayInfo a;
      a.name = std::string(words[1]);
      bool have_words = false, have_bits = false;
      for (std::size_t i = 2; i < words.size(); ++i) {
        auto [key, value] = split_kv(words[i], line_no);
        if (key == "words") {
          a.num_words = parse_int(value, line_no, key);
          have_words = true;
        } else if (key == "bits") {
          a.word_bits = static_cast<int>(parse_int(value, line_no, key));
          have_bits = true;
        } else {
          throw ParseError(line_no, "unknown array key '" + std::string(key) + "'");
        }
      }
      if (!have_words || !have_bits) throw ParseError(line_no, "array needs words= and bits=");
      k.arrays.push_back(std::move(a));
    } else if (head == "loop") {
      if (words.size() < 2) throw ParseError(line_no, "expected 'loop <id> trip=<n> ...'");
      LoopInfo l;
      l.id = std::string(words[1]);
      bool have_trip = false;
      for (std::size_t i = 2; i < words.size(); ++i) {
        auto [key, value] = split_kv(words[i], line_no);
        if (key == "trip") {
          l.trip_count = parse_int(value, line_no, key);
          have_trip = true;
        } else if (key == "parent") {
          l.parent = std::string(value);
        } else if (key == "add") {
          l.ops_add = static_cast<int>(parse_int(value, line_no, key));
        } else if (key == "mul") {
          l.ops_mul = static_cast<int>(parse_int(value, line_no, key));
        } else if (key == "arrays") {
          l.arrays_accessed = split_list(value);
        } else {
          throw ParseError(line_no, "unknown loop key '" + std::string(key) + "'");
        }
      }
      if (!have_trip) throw ParseError(line_no, "loop needs trip=");
      k.loops.push_back(std::move(l));
    } else {
      throw ParseError(line_no, "unknown directive '" + std::string(head) + "'");
    }
  }
  if (!have_kernel) throw ParseError(line_no, "missing 'kernel <name>' line");
  validate_kernel(k);
  return k;
}

std::string serialize_kernel_descriptor(const KernelDescriptor& k) {
  std::ostringstream out;
  out << "kernel " << k.name << "\n";
  out << "hazard=" << format_double(k.hazard_fraction) << "\n";
  for (const auto& a : k.arrays) out << "array " << a.name << " words=" << a.num_words << " bits=" << a.word_bits << "\n";
  for (const auto& l : k.loops) {
    out << "loop " << l.id << " trip=" << l.trip_count;
    if (l.parent) out << " parent=" << *l.parent;
    out << " add=" << l.ops_add << " mul=" << l.ops_mul << " arrays=";
    for (std::size_t i = 0; i < l.arrays_accessed.size(); ++i) out << (i ? "," : "") << l.arrays_accessed[i];
    out << "\n";
  }
  return out.str();
}

KernelDescriptor load_kernel_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open kernel file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kernel_descriptor(buf.str());
}

std::string_view to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::none: return "none";
    case PartitionKind::cyclic: return "cyclic";
    case PartitionKind::block: return "block";
    case PartitionKind::complete: return "complete";
  }
  return "none";
}

std::optional<PartitionKind> partition_kind_from_string(std::string_view s) {
  if (s == "none") return PartitionKind::none;
  if (s == "cyclic") return PartitionKind::cyclic;
  if (s == "block") return PartitionKind::block;
  if (s == "complete") return PartitionKind::complete;
  return std::nullopt;
}

std::string config_key(const PragmaConfig& c) {
  std::string out = "L[";
  for (std::size_t i = 0; i < c.loops.size(); ++i) {
    if (i) out += ';';
    out += 'u' + std::to_string(c.loops[i].unroll_factor) + ',';
    out += c.loops[i].pipeline ? 'p' + std::to_string(c.loops[i].ii) : std::string("-");
  }
  out += "]A[";
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    if (i) out += ';';
    out += to_string(c.arrays[i].kind);
    out += std::to_string(c.arrays[i].factor);
  }
  out += ']';
  return out;
}

void validate_config(const KernelDescriptor& k, const PragmaConfig& c) {
  if (c.loops.size() != k.loops.size()) throw ValidationError("config.loops", "size does not match kernel loops");
  if (c.arrays.size() != k.arrays.size()) throw ValidationError("config.arrays", "size does not match kernel arrays");
  for (std::size_t i = 0; i < c.loops.size(); ++i) {
    const auto& p = c.loops[i];
    const std::string f = "config.loop '" + k.loops[i].id + "'";
    if (p.unroll_factor < 1 || p.unroll_factor > k.loops[i].trip_count)
      throw ValidationError(f + ".unroll_factor", "must lie in [1, trip_count]");
    if (!is_power_of_two(p.unroll_factor) && p.unroll_factor != k.loops[i].trip_count)
      throw ValidationError(f + ".unroll_factor", "must be a power of two or trip_count");
    if (p.ii < 1) throw ValidationError(f + ".ii", "must be >= 1");
    if (!p.pipeline && p.ii != 1) throw ValidationError(f + ".ii", "must be 1 when pipeline is off");
  }
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    const auto& p = c.arrays[i];
    const auto words = k.arrays[i].num_words;
    const std::string f = "config.array '" + k.arrays[i].name + "'.partition_factor";
    switch (p.kind) {
      case PartitionKind::none:
        if (p.factor != 1) throw ValidationError(f, "must be 1 for kind none");
        break;
      case PartitionKind::complete:
        if (p.factor != words) throw ValidationError(f, "must equal num_words for kind complete");
        break;
      case PartitionKind::cyclic:
      case PartitionKind::block:
        if (p.factor < 1 || words % p.factor != 0) throw ValidationError(f, "must divide num_words");
        break;
    }
  }
}

bool is_legal_config(const KernelDescriptor& k, const PragmaConfig& c) {
  try {
    validate_config(k, c);
    return true;
  } catch (const ValidationError&) {
    return false;
  }
}

namespace {

struct Renderer {
  const KernelDescriptor& k;
  const PragmaConfig& c;
  std::ostringstream out;

  void indent(int depth) {
    for (int i = 0; i < depth; ++i) out << "  ";
  }

  void statement(const LoopInfo& l, int depth) {
    if (l.ops_add == 0 && l.ops_mul == 0 && !l.arrays_accessed.empty()) {
      indent(depth);
      out << l.arrays_accessed.front() << "[" << l.id << "] = " << l.arrays_accessed.back() << "[" << l.id << "];\n";
      return;
    }
    if (l.ops_add == 0 && l.ops_mul == 0) return;
    auto operand = [&](std::size_t n) -> std::string {
      if (l.arrays_accessed.empty()) return "t_" + l.id;
      return l.arrays_accessed[n % l.arrays_accessed.size()] + "[" + l.id + "]";
    };
    indent(depth);
    out << operand(0) << " = " << operand(0);
    std::size_t n = 1;
    for (int i = 0; i < l.ops_mul; ++i) out << " * " << operand(n++);
    for (int i = 0; i < l.ops_add; ++i) out << " + " << operand(n++);
    out << ";\n";
  }

  void loop(std::size_t idx, int depth) {
    const auto& l = k.loops[idx];
    const auto& p = c.loops[idx];
    indent(depth);
    out << "for (int " << l.id << " = 0; " << l.id << " < " << l.trip_count << "; " << l.id << "++) {\n";
    if (p.unroll_factor != 1) out << "#pragma HLS UNROLL factor=" << p.unroll_factor << "\n";
    if (p.pipeline) out << "#pragma HLS PIPELINE II=" << p.ii << "\n";
    statement(l, depth + 1);
    for (std::size_t child : k.children_of(idx)) loop(child, depth + 1);
    indent(depth);
    out << "}\n";
  }

  std::string run() {
    out << "// kernel " << k.name << "\n";
    out << "void " << k.name << "(";
    for (std::size_t i = 0; i < k.arrays.size(); ++i) {
      const auto& a = k.arrays[i];
      out << (i ? ", " : "") << c_type_for_bits(a.word_bits) << " " << a.name << "[" << a.num_words << "]";
    }
    out << ") {\n";
    for (std::size_t i = 0; i < k.arrays.size(); ++i) {
      const auto& p = c.arrays[i];
      if (p.kind == PartitionKind::none) continue;
      out << "#pragma HLS ARRAY_PARTITION variable=" << k.arrays[i].name << " " << to_string(p.kind)
          << " factor=" << p.factor << "\n";
    }
    for (const auto& l : k.loops) {
      if (l.arrays_accessed.empty() && (l.ops_add || l.ops_mul)) out << "  int t_" << l.id << " = 0;\n";
    }
    for (std::size_t r : k.roots()) loop(r, 1);
    out << "}\n";
    return out.str();
  }
};

}  // namespace

DesignPoint render_design(std::shared_ptr<const KernelDescriptor> kernel, const PragmaConfig& config) {
  if (!kernel) throw ValidationError("kernel", "missing kernel");
  validate_config(*kernel, config);
  DesignPoint d;
  d.config = config;
  d.rendered_code = Renderer{*kernel, config, {}}.run();
  d.kernel = std::move(kernel);
  return d;
}

std::size_t Dimension::size() const {
  switch (kind) {
    case Kind::unroll: return unroll_choices.size();
    case Kind::pipeline: return pipeline_choices.size();
    case Kind::partition: return partition_choices.size();
  }
  return 0;
}

DesignSpace::DesignSpace(const KernelDescriptor& k) : num_loops_(k.loops.size()), num_arrays_(k.arrays.size()) {
  for (std::size_t i = 0; i < k.loops.size(); ++i) {
    const auto trip = k.loops[i].trip_count;
    Dimension u{Dimension::Kind::unroll, i, {}, {}, {}};
    for (std::int64_t f = 1; f <= trip; f *= 2) u.unroll_choices.push_back(f);
    if (!is_power_of_two(trip)) u.unroll_choices.push_back(trip);
    dims_.push_back(std::move(u));
    dims_.push_back(Dimension{Dimension::Kind::pipeline, i, {}, {0, 1, 2, 4}, {}});
  }
  for (std::size_t i = 0; i < k.arrays.size(); ++i) {
    const auto words = k.arrays[i].num_words;
    Dimension p{Dimension::Kind::partition, i, {}, {}, {}};
    p.partition_choices.push_back({PartitionKind::none, 1});
    for (auto kind : {PartitionKind::cyclic, PartitionKind::block})
      for (std::int64_t f = 2; f < words; f *= 2)
        if (words % f == 0) p.partition_choices.push_back({kind, f});
    p.partition_choices.push_back({PartitionKind::complete, words});
    dims_.push_back(std::move(p));
  }
  for (const auto& d : dims_) {
    const auto n = static_cast<std::uint64_t>(d.size());
    size_ = (size_ > UINT64_MAX / n) ? UINT64_MAX : size_ * n;
  }
}

PragmaConfig DesignSpace::decode(const std::vector<std::size_t>& idx) const {
  PragmaConfig c;
  c.loops.resize(num_loops_);
  c.arrays.resize(num_arrays_);
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    const auto& dim = dims_[d];
    switch (dim.kind) {
      case Dimension::Kind::unroll:
        c.loops[dim.target].unroll_factor = dim.unroll_choices.at(idx[d]);
        break;
      case Dimension::Kind::pipeline: {
        const int ii = dim.pipeline_choices.at(idx[d]);
        c.loops[dim.target].pipeline = ii != 0;
        c.loops[dim.target].ii = ii == 0 ? 1 : ii;
        break;
      }
      case Dimension::Kind::partition:
        c.arrays[dim.target] = dim.partition_choices.at(idx[d]);
        break;
    }
  }
  return c;
}

PragmaConfig DesignSpace::config_at(std::uint64_t index) const {
  std::vector<std::size_t> idx(dims_.size());
  for (std::size_t d = dims_.size(); d-- > 0;) {
    const auto n = dims_[d].size();
    idx[d] = static_cast<std::size_t>(index % n);
    index /= n;
  }
  return decode(idx);
}

std::vector<std::size_t> DesignSpace::choice_indices(const PragmaConfig& c) const {
  if (c.loops.size() != num_loops_ || c.arrays.size() != num_arrays_)
    throw ValidationError("config", "shape does not match design space");
  std::vector<std::size_t> idx(dims_.size());
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    const auto& dim = dims_[d];
    std::ptrdiff_t pos = -1;
    switch (dim.kind) {
      case Dimension::Kind::unroll: {
        auto it = std::find(dim.unroll_choices.begin(), dim.unroll_choices.end(), c.loops[dim.target].unroll_factor);
        if (it != dim.unroll_choices.end()) pos = it - dim.unroll_choices.begin();
        break;
      }
      case Dimension::Kind::pipeline: {
        const int key = c.loops[dim.target].pipeline ? c.loops[dim.target].ii : 0;
        auto it = std::find(dim.pipeline_choices.begin(), dim.pipeline_choices.end(), key);
        if (it != dim.pipeline_choices.end()) pos = it - dim.pipeline_choices.begin();
        break;
      }
      case Dimension::Kind::partition: {
        auto it = std::find(dim.partition_choices.begin(), dim.partition_choices.end(), c.arrays[dim.target]);
        if (it != dim.partition_choices.end()) pos = it - dim.partition_choices.begin();
        break;
      }
    }
    if (pos < 0) throw ValidationError("config", "choice outside the design space grid");
    idx[d] = static_cast<std::size_t>(pos);
  }
  return idx;
}

std::uint64_t DesignSpace::index_of(const PragmaConfig& c) const {
  const auto idx = choice_indices(c);
  std::uint64_t out = 0;
  for (std::size_t d = 0; d < dims_.size(); ++d) out = out * dims_[d].size() + idx[d];
  return out;
}

std::vector<PragmaConfig> enumerate_space(const KernelDescriptor& kernel, std::uint64_t cap) {
  const DesignSpace space(kernel);
  if (space.size() > cap)
    throw SpaceOverflowError("design space of kernel '" + kernel.name + "' has more than " + std::to_string(cap) +
                             " configs; use sample_config instead");
  std::vector<PragmaConfig> out;
  out.reserve(space.size());
  for (std::uint64_t i = 0; i < space.size(); ++i) out.push_back(space.config_at(i));
  return out;
}

PragmaConfig sample_config(const KernelDescriptor& kernel, std::uint64_t rng_seed) {
  const DesignSpace space(kernel);
  Rng rng(rng_seed);
  std::vector<std::size_t> idx;
  idx.reserve(space.dimensions().size());
  for (const auto& d : space.dimensions()) idx.push_back(uniform_index(rng, d.size()));
  return space.decode(idx);
}

}  // namespace qorseek
