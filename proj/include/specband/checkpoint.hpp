#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "specband/hsi.hpp"
#include "specband/kv.hpp"
#include "specband/model.hpp"

namespace specband {

// Model checkpoint: 8-byte magic, u32 version, u32 config length, config as
// key = value text, then float32 LE parameter blocks in declaration order
// (per block: kernels, bias, gamma, beta, running mean, running variance;
// then attention modules; then the ANN head and gate; then the optional
// per-band scaler).
constexpr char kCheckpointMagic[8] = {'S', 'B', 'A', 'N', 'D', 'C', 'K', 'P'};
constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  AttentionCnnModel model;
  bool has_scaler = false;
  BandScaler scaler;
  uint64_t split_seed = 0;
};

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_block(std::ostream& out, const float* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(float)));
}

inline void read_block(std::istream& in, float* data, std::size_t count, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw DataError(path + ": truncated parameter block");
}

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

}  // namespace detail

inline std::string checkpoint_config_text(const Checkpoint& ckpt) {
  const AttentionCnnConfig& cfg = ckpt.model.config;
  std::ostringstream os;
  os << "bands = " << ckpt.model.bands << "\n"
     << "num_blocks = " << cfg.num_blocks << "\n"
     << "channels = " << detail::join_ints(cfg.channels) << "\n"
     << "conv_k = " << cfg.conv_k << "\n"
     << "conv_padding = " << cfg.conv_padding << "\n"
     << "pool_k = " << cfg.pool_k << "\n"
     << "pool_stride = " << cfg.pool_stride << "\n"
     << "hidden = " << detail::join_ints(cfg.hidden) << "\n"
     << "num_classes = " << cfg.num_classes << "\n"
     << "use_attention = " << (cfg.use_attention ? 1 : 0) << "\n"
     << "seed = " << cfg.seed << "\n"
     << "split_seed = " << ckpt.split_seed << "\n"
     << "has_scaler = " << (ckpt.has_scaler ? 1 : 0) << "\n";
  return os.str();
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u32(out, kCheckpointVersion);
  const std::string config = checkpoint_config_text(ckpt);
  detail::write_u32(out, static_cast<uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));

  const AttentionCnnModel& model = ckpt.model;
  for (const auto& block : model.blocks) {
    detail::write_block(out, block.kernels.value.data(), static_cast<std::size_t>(block.kernels.size()));
    detail::write_block(out, block.bias.value.data(), static_cast<std::size_t>(block.bias.size()));
    detail::write_block(out, block.bn.gamma.value.data(), static_cast<std::size_t>(block.bn.gamma.size()));
    detail::write_block(out, block.bn.beta.value.data(), static_cast<std::size_t>(block.bn.beta.size()));
    detail::write_block(out, block.bn.running_mean.data(), block.bn.running_mean.size());
    detail::write_block(out, block.bn.running_var.data(), block.bn.running_var.size());
  }
  for (const auto& att : model.attention) {
    detail::write_block(out, att.est_kernel.value.data(), static_cast<std::size_t>(att.est_kernel.size()));
    detail::write_block(out, att.est_bias.value.data(), static_cast<std::size_t>(att.est_bias.size()));
    detail::write_block(out, att.w_out.value.data(), static_cast<std::size_t>(att.w_out.size()));
    detail::write_block(out, att.w_conf.value.data(), static_cast<std::size_t>(att.w_conf.size()));
  }
  for (const ParamT<float>* p : {&model.fc1_w, &model.fc1_b, &model.fc2_w, &model.fc2_b, &model.fc3_w, &model.fc3_b}) {
    detail::write_block(out, p->value.data(), static_cast<std::size_t>(p->size()));
  }
  if (model.config.use_attention) {
    detail::write_block(out, model.net_gate.value.data(), static_cast<std::size_t>(model.net_gate.size()));
  }
  if (ckpt.has_scaler) {
    detail::write_block(out, ckpt.scaler.lo.data(), ckpt.scaler.lo.size());
    detail::write_block(out, ckpt.scaler.span.data(), ckpt.scaler.span.size());
  }
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError(path + ": not a specband checkpoint");
  }
  const uint32_t version = detail::read_u32(in, path);
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const uint32_t config_len = detail::read_u32(in, path);
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), config_len);
  if (!in) throw DataError(path + ": truncated config");
  const auto kv = parse_kv_text(config_text, path);

  AttentionCnnConfig cfg;
  cfg.num_blocks = static_cast<int>(kv_long(kv, "num_blocks", path));
  cfg.channels.clear();
  for (const std::string& s : split_list(kv_require(kv, "channels", path))) cfg.channels.push_back(std::stoi(s));
  cfg.conv_k = static_cast<int>(kv_long(kv, "conv_k", path));
  cfg.conv_padding = static_cast<int>(kv_long(kv, "conv_padding", path));
  cfg.pool_k = static_cast<int>(kv_long(kv, "pool_k", path));
  cfg.pool_stride = static_cast<int>(kv_long(kv, "pool_stride", path));
  cfg.hidden.clear();
  for (const std::string& s : split_list(kv_require(kv, "hidden", path))) cfg.hidden.push_back(std::stoi(s));
  cfg.num_classes = static_cast<int>(kv_long(kv, "num_classes", path));
  cfg.use_attention = kv_long(kv, "use_attention", path) != 0;
  cfg.seed = static_cast<uint64_t>(kv_long(kv, "seed", path));
  const int bands = static_cast<int>(kv_long(kv, "bands", path));

  Checkpoint ckpt;
  ckpt.split_seed = static_cast<uint64_t>(kv_long(kv, "split_seed", path));
  ckpt.has_scaler = kv_long(kv, "has_scaler", path) != 0;
  ckpt.model = build_model<float>(cfg, bands);

  AttentionCnnModel& model = ckpt.model;
  for (auto& block : model.blocks) {
    detail::read_block(in, block.kernels.value.data(), static_cast<std::size_t>(block.kernels.size()), path);
    detail::read_block(in, block.bias.value.data(), static_cast<std::size_t>(block.bias.size()), path);
    detail::read_block(in, block.bn.gamma.value.data(), static_cast<std::size_t>(block.bn.gamma.size()), path);
    detail::read_block(in, block.bn.beta.value.data(), static_cast<std::size_t>(block.bn.beta.size()), path);
    detail::read_block(in, block.bn.running_mean.data(), block.bn.running_mean.size(), path);
    detail::read_block(in, block.bn.running_var.data(), block.bn.running_var.size(), path);
  }
  for (auto& att : model.attention) {
    detail::read_block(in, att.est_kernel.value.data(), static_cast<std::size_t>(att.est_kernel.size()), path);
    detail::read_block(in, att.est_bias.value.data(), static_cast<std::size_t>(att.est_bias.size()), path);
    detail::read_block(in, att.w_out.value.data(), static_cast<std::size_t>(att.w_out.size()), path);
    detail::read_block(in, att.w_conf.value.data(), static_cast<std::size_t>(att.w_conf.size()), path);
  }
  for (ParamT<float>* p : {&model.fc1_w, &model.fc1_b, &model.fc2_w, &model.fc2_b, &model.fc3_w, &model.fc3_b}) {
    detail::read_block(in, p->value.data(), static_cast<std::size_t>(p->size()), path);
  }
  if (cfg.use_attention) {
    detail::read_block(in, model.net_gate.value.data(), static_cast<std::size_t>(model.net_gate.size()), path);
  }
  if (ckpt.has_scaler) {
    ckpt.scaler.lo.assign(static_cast<std::size_t>(bands), 0.0f);
    ckpt.scaler.span.assign(static_cast<std::size_t>(bands), 0.0f);
    detail::read_block(in, ckpt.scaler.lo.data(), ckpt.scaler.lo.size(), path);
    detail::read_block(in, ckpt.scaler.span.data(), ckpt.scaler.span.size(), path);
  }
  return ckpt;
}

}  // namespace specband
