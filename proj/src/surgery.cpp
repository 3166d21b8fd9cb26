#include "ulm/surgery.hpp"

#include <cstring>
#include <span>

#include <json.hpp>

#include "ulm/errors.hpp"
#include "ulm/formats.hpp"
#include "ulm/hash.hpp"
#include "ulm/rng.hpp"

namespace ulm {

namespace {

std::string tensor_hash(const Tensor& t) {
  // Shape is part of the identity: equal bytes under a different shape is a change.
  std::string buf;
  for (auto d : t.shape) buf += std::to_string(d) + ",";
  buf += ";";
  const auto* p = reinterpret_cast<const char*>(t.data.data());
  buf.append(p, t.data.size() * sizeof(float));
  return sha256_hex(buf);
}

bool same_except_vocab(ModelConfig a, ModelConfig b) {
  a.vocab_size = b.vocab_size;
  return a == b;
}

}  // namespace

SurgeryResult twist_init(const Checkpoint& source, const Vocabulary& vocab, std::uint64_t seed) {
  validate(source);
  ModelConfig cfg = source.config;
  cfg.vocab_size = vocab.size();
  validate(cfg);

  SurgeryResult out;
  Checkpoint& ckpt = out.checkpoint;
  ckpt.config = cfg;
  ckpt.step = 0;
  const std::string source_hash = checkpoint_hash(source);
  ckpt.provenance = Provenance{Provenance::Kind::kWarm, source_hash, seed};
  out.report.source_hash = source_hash;
  out.report.seed = seed;

  Rng rng(seed);
  for (const auto& spec : tensor_specs(cfg)) {
    if (!spec.vocabulary_bound) {
      ckpt.tensors.push_back(NamedTensor{spec.name, source.at(spec.name)});
      out.report.preserved.push_back(spec.name);
      continue;
    }
    Tensor t{spec.shape, {}};
    t.data.resize(static_cast<std::size_t>(t.numel()));
    for (auto& v : t.data) v = static_cast<float>(cfg.init_std * rng.normal()) + 0.0f;
    ckpt.tensors.push_back(NamedTensor{spec.name, std::move(t)});
    out.report.replaced.push_back(spec.name);
  }
  return out;
}

SurgeryReport verify_surgery(const Checkpoint& source, const Checkpoint& result) {
  if (!same_except_vocab(source.config, result.config)) {
    throw SurgeryViolation("verify_surgery: configs differ outside vocab_size");
  }
  const std::string source_hash = checkpoint_hash(source);
  const bool claims_source = result.provenance.kind == Provenance::Kind::kWarm &&
                             result.provenance.source_hash == source_hash;

  SurgeryReport report;
  report.source_hash = source_hash;
  report.seed = result.provenance.seed;
  for (const auto& spec : tensor_specs(result.config)) {
    const Tensor* r = result.find(spec.name);
    if (r == nullptr) throw SurgeryViolation("verify_surgery: result lacks tensor " + spec.name);
    const Tensor* s = source.find(spec.name);
    const bool equal = s != nullptr && tensor_hash(*s) == tensor_hash(*r);
    if (equal) {
      report.preserved.push_back(spec.name);
    } else {
      if (claims_source && !spec.vocabulary_bound) {
        throw SurgeryViolation("verify_surgery: body tensor " + spec.name +
                               " differs from the source");
      }
      report.replaced.push_back(spec.name);
    }
  }
  return report;
}

std::string surgery_report_to_json(const SurgeryReport& report) {
  const nlohmann::json j{{"preserved", report.preserved},
                         {"replaced", report.replaced},
                         {"source_hash", report.source_hash},
                         {"seed", report.seed}};
  return j.dump(2);
}

}  // namespace ulm
