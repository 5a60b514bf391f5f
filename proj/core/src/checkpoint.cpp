#include "saintplus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "saintplus/errors.hpp"

namespace saintplus::training {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'K', 'T'};
constexpr std::string_view kMomentM = "adam.m:";
constexpr std::string_view kMomentV = "adam.v:";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_record(std::string& out, std::string_view name, const tensor::Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (const auto d : t.shape()) put_u64(out, d);
  for (const double x : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string_view take(std::size_t n, const char* field) {
    need(n, field);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }

  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw LoadError(std::string("checkpoint truncated while reading ") + field);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::pair<std::string, tensor::Tensor> read_record(Reader& r) {
  const auto name_len = r.u32("record name length");
  std::string name(r.take(name_len, "record name"));
  const auto rank = r.u32("record rank");
  if (rank > 8) throw LoadError("checkpoint record " + name + ": implausible rank " + std::to_string(rank));
  tensor::Shape shape(rank);
  for (auto& d : shape) d = r.u64("record dims");
  const std::size_t count = tensor::element_count(shape);
  if (count > (std::size_t{1} << 34)) throw LoadError("checkpoint record " + name + ": implausible size");
  std::vector<double> values(count);
  for (auto& v : values) v = std::bit_cast<double>(r.u64("record values"));
  return {std::move(name), tensor::Tensor(std::move(shape), std::move(values))};
}

}  // namespace

Checkpoint make_checkpoint(const model::SaintPlus& model, const TrainConfig& train_config,
                           const OptimizerState* optimizer, const KeyValueConfig& extra) {
  const auto& params = model.parameters();
  KeyValueConfig config;
  model.config().write(config, "model");
  train_config.write(config, "train");
  config.set("checkpoint", "parameter_count", static_cast<std::int64_t>(params.scalar_count()));
  config.set("checkpoint", "step", std::to_string(optimizer ? optimizer->step : 0));
  config.set_bool("checkpoint", "optimizer", optimizer != nullptr);
  config.merge(extra);

  Checkpoint c;
  c.config_text = config.serialize();
  const auto order = params.canonical_order();
  for (const auto i : order) c.parameters.emplace_back(params.name(i), params[i]);
  if (optimizer) {
    if (optimizer->m.size() != params.size() || optimizer->v.size() != params.size()) {
      throw ContractError("make_checkpoint: optimizer state does not match the model");
    }
    OptimizerState sorted;
    sorted.step = optimizer->step;
    for (const auto i : order) {
      sorted.m.push_back(optimizer->m[i]);
      sorted.v.push_back(optimizer->v[i]);
    }
    c.optimizer = std::move(sorted);
  }
  for (auto& [name, t] : c.parameters) t.clear_grad();
  return c;
}

std::string encode(const Checkpoint& c) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(c.config_text.size()));
  out.append(c.config_text);
  for (const auto& [name, t] : c.parameters) put_record(out, name, t);
  if (c.optimizer) {
    if (c.optimizer->m.size() != c.parameters.size() || c.optimizer->v.size() != c.parameters.size()) {
      throw ContractError("encode: optimizer moments do not match the parameter records");
    }
    for (std::size_t i = 0; i < c.parameters.size(); ++i)
      put_record(out, std::string(kMomentM) + c.parameters[i].first, c.optimizer->m[i]);
    for (std::size_t i = 0; i < c.parameters.size(); ++i)
      put_record(out, std::string(kMomentV) + c.parameters[i].first, c.optimizer->v[i]);
  }
  return out;
}

Checkpoint decode(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw LoadError("checkpoint magic mismatch");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const auto config_len = r.u32("config length");
  c.config_text = std::string(r.take(config_len, "config text"));
  KeyValueConfig config;
  try {
    config = KeyValueConfig::parse(c.config_text);
  } catch (const std::exception& e) {
    throw LoadError(std::string("checkpoint config text: ") + e.what());
  }
  const bool has_optimizer = config.get_bool("checkpoint", "optimizer", false);

  std::vector<std::pair<std::string, tensor::Tensor>> records;
  while (!r.done()) records.push_back(read_record(r));

  std::size_t n = records.size();
  if (has_optimizer) {
    if (n % 3 != 0) throw LoadError("checkpoint optimizer records do not match parameter records");
    n /= 3;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (records[i].first.starts_with(kMomentM) || records[i].first.starts_with(kMomentV)) {
      throw LoadError("checkpoint parameter record has reserved name " + records[i].first);
    }
    if (i > 0 && !(records[i - 1].first < records[i].first)) {
      throw LoadError("checkpoint parameter records out of name order at " + records[i].first);
    }
  }
  c.parameters.assign(std::make_move_iterator(records.begin()),
                      std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n)));
  if (has_optimizer) {
    OptimizerState s;
    const auto step_text = config.get_string("checkpoint", "step", "0");
    try {
      s.step = std::stoull(step_text);
    } catch (const std::exception&) {
      throw LoadError("checkpoint.step is not an unsigned integer: " + step_text);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& m = records[n + i];
      auto& v = records[2 * n + i];
      const auto& name = c.parameters[i].first;
      if (m.first != std::string(kMomentM) + name || v.first != std::string(kMomentV) + name) {
        throw LoadError("checkpoint optimizer record for " + name + " missing or misplaced");
      }
      if (m.second.shape() != c.parameters[i].second.shape() ||
          v.second.shape() != c.parameters[i].second.shape()) {
        throw LoadError("checkpoint optimizer record shape mismatch for " + name);
      }
      s.m.push_back(std::move(m.second));
      s.v.push_back(std::move(v.second));
    }
    c.optimizer = std::move(s);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode(checkpoint);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

void restore(model::SaintPlus& model, const Checkpoint& checkpoint) {
  auto& params = model.parameters();
  if (checkpoint.parameters.size() != params.size()) {
    throw LoadError("checkpoint holds " + std::to_string(checkpoint.parameters.size()) +
                    " parameters, model expects " + std::to_string(params.size()));
  }
  std::vector<std::size_t> targets;
  targets.reserve(params.size());
  for (const auto& [name, t] : checkpoint.parameters) {
    const auto i = params.find(name);
    if (!i) throw LoadError("checkpoint parameter " + name + " is not part of the model");
    if (params[*i].shape() != t.shape()) {
      throw LoadError("checkpoint parameter " + name + " has shape " + tensor::shape_string(t.shape()) +
                      ", model expects " + tensor::shape_string(params[*i].shape()));
    }
    targets.push_back(*i);
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto dst = params[targets[k]].values();
    const auto src = checkpoint.parameters[k].second.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

model::SaintPlus model_from_checkpoint(const Checkpoint& checkpoint) {
  model::ModelConfig config;
  try {
    config = model::ModelConfig::read(checkpoint.config(), "model");
    config.validate();
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint model config: ") + e.what());
  }
  model::SaintPlus model(config, 0);
  restore(model, checkpoint);
  return model;
}

OptimizerState optimizer_for(const model::SaintPlus& model, const Checkpoint& checkpoint) {
  if (!checkpoint.optimizer) throw LoadError("checkpoint has no optimizer state");
  const auto& params = model.parameters();
  std::map<std::string_view, std::size_t> position;
  for (std::size_t k = 0; k < checkpoint.parameters.size(); ++k)
    position[checkpoint.parameters[k].first] = k;
  OptimizerState s;
  s.step = checkpoint.optimizer->step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto it = position.find(params.name(i));
    if (it == position.end()) throw LoadError("checkpoint lacks optimizer state for " + params.name(i));
    if (checkpoint.optimizer->m[it->second].shape() != params[i].shape()) {
      throw LoadError("checkpoint optimizer state shape mismatch for " + params.name(i));
    }
    s.m.push_back(checkpoint.optimizer->m[it->second]);
    s.v.push_back(checkpoint.optimizer->v[it->second]);
  }
  return s;
}

}  // namespace saintplus::training
