#include "qorseek/serialization.hpp"

#include <istream>
#include <map>
#include <ostream>

#include "qorseek/common.hpp"

namespace qorseek {

Json to_json(const PragmaConfig& config) {
  Json loops = Json::array();
  for (const auto& l : config.loops) loops.push_back({{"unroll", l.unroll_factor}, {"pipeline", l.pipeline}, {"ii", l.ii}});
  Json arrays = Json::array();
  for (const auto& a : config.arrays) arrays.push_back({{"kind", std::string(to_string(a.kind))}, {"factor", a.factor}});
  return Json{{"loops", std::move(loops)}, {"arrays", std::move(arrays)}};
}

PragmaConfig pragma_config_from_json(const Json& j) {
  PragmaConfig c;
  for (const auto& l : j.at("loops"))
    c.loops.push_back(LoopPragma{l.at("unroll").get<std::int64_t>(), l.at("pipeline").get<bool>(), l.at("ii").get<int>()});
  for (const auto& a : j.at("arrays")) {
    const auto kind = partition_kind_from_string(a.at("kind").get<std::string>());
    if (!kind) throw ValidationError("arrays.kind", "unknown partition kind '" + a.at("kind").get<std::string>() + "'");
    c.arrays.push_back(ArrayPragma{*kind, a.at("factor").get<std::int64_t>()});
  }
  return c;
}

Json to_json(const QorVector& q) {
  return Json{{"latency_cycles", q.latency_cycles}, {"lut", q.lut}, {"dsp", q.dsp}, {"bram", q.bram}, {"ff", q.ff}};
}

QorVector qor_from_json(const Json& j) {
  return QorVector{j.at("latency_cycles").get<std::int64_t>(), j.at("lut").get<std::int64_t>(),
                   j.at("dsp").get<std::int64_t>(), j.at("bram").get<std::int64_t>(), j.at("ff").get<std::int64_t>()};
}

void write_corpus_jsonl(std::ostream& out, const DseCorpus& corpus) {
  for (const auto& e : corpus.entries) {
    // ordered_json keeps insertion order in the output.
    nlohmann::ordered_json line;
    line["kernel"] = corpus.kernel->name;
    line["step"] = e.step;
    line["config"] = nlohmann::ordered_json::parse(to_json(e.design.config).dump());
    line["config_key"] = config_key(e.design.config);
    line["compiled"] = true;
    line["functional"] = e.functional;
    line["qor"] = nlohmann::ordered_json::parse(to_json(e.qor).dump());
    out << line.dump() << '\n';
  }
}

std::vector<DseCorpus> read_corpus_jsonl(std::istream& in, const KernelLookup& lookup) {
  std::vector<DseCorpus> out;
  std::map<std::string, std::size_t> slot;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    std::string kernel_name;
    CorpusEntry entry;
    PragmaConfig config;
    try {
      j = Json::parse(text);
      kernel_name = j.at("kernel").get<std::string>();
      config = pragma_config_from_json(j.at("config"));
      entry.qor = qor_from_json(j.at("qor"));
      entry.functional = j.at("functional").get<bool>();
      entry.step = j.at("step").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    auto kernel = lookup(kernel_name);
    if (!kernel) throw ValidationError("kernel", "unknown kernel '" + kernel_name + "' on corpus line " + std::to_string(line_no));
    auto [it, inserted] = slot.try_emplace(kernel_name, out.size());
    if (inserted) {
      out.emplace_back();
      out.back().kernel = kernel;
    }
    validate_config(*kernel, config);
    entry.design = render_design(kernel, config);
    out[it->second].entries.push_back(std::move(entry));
  }
  return out;
}

}  // namespace qorseek
