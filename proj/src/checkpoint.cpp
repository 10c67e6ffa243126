#include "hgrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "hgrec/digest.hpp"
#include "hgrec/error.hpp"

namespace hgrec {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr std::string_view kMagic = "HGRECKPT";
constexpr std::size_t kDigestSize = 32;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    // The trailing digest must still fit after this field.
    if (bytes_.size() < kDigestSize || pos_ + n > bytes_.size() - kDigestSize) {
      throw CheckpointError(CheckpointError::Kind::corrupt,
                            std::string("corrupt checkpoint: truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t narrow32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw CheckpointError(CheckpointError::Kind::io, std::string(what) + " too large");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void round_to_stored_precision(ModelParams& params) {
  for (auto& [name, block] : params.blocks()) {
    for (double& v : block->values()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::string serialize_checkpoint(const Model& model, const nlohmann::json& provenance) {
  const auto blocks = model.params.blocks();
  nlohmann::json meta = {{"model", model.config},
                         {"vocab", model.vocab.tokens()},
                         {"provenance", provenance}};
  const std::string meta_text = meta.dump();

  std::string out;
  out.append(kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, narrow32(model.config.d, "d"));
  put<std::uint32_t>(out, narrow32(model.config.n_users, "n_users"));
  put<std::uint32_t>(out, narrow32(model.config.n_items, "n_items"));
  put<std::uint32_t>(out, narrow32(model.vocab.size(), "vocab size"));
  put<std::uint32_t>(out, narrow32(blocks.size(), "block count"));
  put<std::uint64_t>(out, meta_text.size());
  out.append(meta_text);
  for (const auto& [name, m] : blocks) {
    if (name.size() > 0xffff) throw CheckpointError(CheckpointError::Kind::io, "block name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    put<std::uint32_t>(out, narrow32(m->rows(), "rows"));
    put<std::uint32_t>(out, narrow32(m->cols(), "cols"));
    for (double v : m->values()) put<float>(out, static_cast<float>(v));
  }
  Sha256 h;
  h.update(out);
  const auto digest = h.finish();
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

LoadedCheckpoint parse_checkpoint(std::string_view bytes, std::optional<std::size_t> expected_d,
                                  RemoteOptions remote) {
  using Kind = CheckpointError::Kind;
  Reader r(bytes);
  if (r.take(kMagic.size(), "magic") != kMagic) {
    throw CheckpointError(Kind::corrupt, "corrupt checkpoint: bad magic");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch,
                          "checkpoint format version " + std::to_string(version) +
                              ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const auto d = r.get<std::uint32_t>("d");
  if (expected_d && *expected_d != d) {
    throw CheckpointError(Kind::dimension_mismatch, "checkpoint has d = " + std::to_string(d) +
                                                        ", expected d = " + std::to_string(*expected_d));
  }
  const auto n_users = r.get<std::uint32_t>("n_users");
  const auto n_items = r.get<std::uint32_t>("n_items");
  const auto vocab_size = r.get<std::uint32_t>("vocab size");
  const auto n_blocks = r.get<std::uint32_t>("block count");
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  if (meta_len > r.remaining()) throw CheckpointError(Kind::corrupt, "corrupt checkpoint: metadata length");
  const auto meta_text = r.take(static_cast<std::size_t>(meta_len), "metadata");

  std::map<std::string, Matrix> stored;
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    const auto name_len = r.get<std::uint16_t>("block name length");
    std::string name(r.take(name_len, "block name"));
    const auto rows = r.get<std::uint32_t>("block rows");
    const auto cols = r.get<std::uint32_t>("block cols");
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count > r.remaining() / sizeof(float)) {
      throw CheckpointError(Kind::corrupt, "corrupt checkpoint: truncated block " + name);
    }
    const auto raw = r.take(static_cast<std::size_t>(count * sizeof(float)), "block data");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, raw.data() + i * sizeof(float), sizeof(float));
      m.values()[i] = static_cast<double>(f);
    }
    if (!stored.emplace(name, std::move(m)).second) {
      throw CheckpointError(Kind::corrupt, "corrupt checkpoint: duplicate block " + name);
    }
  }
  if (r.remaining() != kDigestSize) throw CheckpointError(Kind::corrupt, "corrupt checkpoint: trailing bytes");
  const std::size_t body = r.position();
  Sha256 h;
  h.update(bytes.substr(0, body));
  const auto actual = h.finish();
  if (std::memcmp(actual.data(), bytes.data() + body, kDigestSize) != 0) {
    throw CheckpointError(Kind::digest_mismatch, "checkpoint digest mismatch");
  }

  LoadedCheckpoint out;
  out.digest = to_hex(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data() + body), kDigestSize));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
    out.model.config = meta.at("model").get<ModelConfig>();
    out.model.vocab = PromptVocab::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
    out.provenance = meta.value("provenance", nlohmann::json());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::corrupt, std::string("corrupt checkpoint metadata: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(Kind::corrupt, std::string("corrupt checkpoint metadata: ") + e.what());
  }
  const auto& cfg = out.model.config;
  if (cfg.d != d || cfg.n_users != n_users || cfg.n_items != n_items ||
      out.model.vocab.size() != vocab_size) {
    throw CheckpointError(Kind::corrupt, "corrupt checkpoint: header disagrees with metadata");
  }
  try {
    out.model.params = init_model_params(cfg, vocab_size, 0);
  } catch (const InvalidArgument& e) {
    throw CheckpointError(Kind::corrupt, std::string("corrupt checkpoint config: ") + e.what());
  }
  auto blocks = out.model.params.blocks();
  if (blocks.size() != stored.size()) {
    throw CheckpointError(Kind::corrupt, "corrupt checkpoint: expected " + std::to_string(blocks.size()) +
                                             " blocks, found " + std::to_string(stored.size()));
  }
  for (auto& [name, m] : blocks) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError(Kind::corrupt, "corrupt checkpoint: missing block " + name);
    if (!it->second.same_shape(*m)) {
      throw CheckpointError(Kind::dimension_mismatch, "block " + name + " stored as " +
                                                          shape_string(it->second) + ", model expects " +
                                                          shape_string(*m));
    }
    *m = std::move(it->second);
  }
  out.model.rebuild_pool(std::move(remote));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& provenance) {
  const std::string bytes = serialize_checkpoint(model, provenance);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::io, "cannot rename onto " + path.string() + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::size_t> expected_d, RemoteOptions remote) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, expected_d, std::move(remote));
}

}  // namespace hgrec
