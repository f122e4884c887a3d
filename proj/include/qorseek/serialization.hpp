#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "qorseek/dse.hpp"
#include "qorseek/synth_oracle.hpp"

namespace qorseek {

using Json = nlohmann::json;

Json to_json(const PragmaConfig& config);
PragmaConfig pragma_config_from_json(const Json& j);

Json to_json(const QorVector& q);
QorVector qor_from_json(const Json& j);

/// Resolves a kernel name to its descriptor; returns nullptr when unknown.
using KernelLookup = std::function<std::shared_ptr<const KernelDescriptor>(const std::string&)>;

/// One JSON object per line:
///   {"kernel", "step", "config", "config_key", "compiled", "functional", "qor"}
/// Key order is fixed so that equal corpora serialize to equal bytes.
void write_corpus_jsonl(std::ostream& out, const DseCorpus& corpus);

/// Groups lines by kernel (first-seen order) and re-renders every design.
/// Throws ParseError on malformed lines and ValidationError on unknown kernels.
std::vector<DseCorpus> read_corpus_jsonl(std::istream& in, const KernelLookup& lookup);

}  // namespace qorseek
