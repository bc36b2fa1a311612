#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/config_json.hpp"
#include "mpd/denoiser/adamw.hpp"
#include "mpd/denoiser/params.hpp"
#include "mpd/diffusion/sampling.hpp"
#include "mpd/error.hpp"
#include "mpd/prodmp/types.hpp"

namespace mpd::denoiser {

inline constexpr char kCheckpointMagic[9] = "MPDCKPT1";

// Everything needed to rebuild a policy, plus optional optimizer state for resuming.
struct Checkpoint {
  std::string task;
  DenoiserParams params;
  prodmp::ProDMPConfig prodmp;
  diffusion::NoiseConfig noise;
  double dt_low = 0.1;
  double dt_high = 0.005;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::optional<OptimizerState> optimizer;
  // Raw optimizer iterate when `params` holds a moving average (resumable snapshots only).
  std::optional<Eigen::VectorXd> training_parameters;
  Json extra = Json::object();  // free-form run metadata
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct TensorRef {
  std::string name;
  Eigen::VectorXd* target;
  std::vector<Eigen::Index> shape;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  ck.params.validate();
  const DenoiserParams& p = ck.params;
  std::vector<std::pair<std::string, const Eigen::VectorXd*>> tensors{
      {"net.parameters", &p.net.parameters()},
      {"action_norm.offset", &p.action_norm.offset},
      {"action_norm.scale", &p.action_norm.scale},
      {"obs_norm.offset", &p.obs_norm.offset},
      {"obs_norm.scale", &p.obs_norm.scale}};
  if (ck.optimizer) {
    tensors.emplace_back("optimizer.first_moment", &ck.optimizer->first_moment);
    tensors.emplace_back("optimizer.second_moment", &ck.optimizer->second_moment);
  }
  if (ck.training_parameters) {
    if (ck.training_parameters->size() != p.net.parameter_count())
      throw ContractError("training parameters do not match the network size");
    tensors.emplace_back("train.parameters", &*ck.training_parameters);
  }

  Json header;
  header["format"] = "MPDCKPT1";
  header["task"] = ck.task;
  header["architecture"] = to_json(p.arch);
  header["variant"] = to_string(p.arch.variant);
  header["prodmp"] = to_json(ck.prodmp);
  header["noise"] = to_json(ck.noise);
  header["dt_low"] = ck.dt_low;
  header["dt_high"] = ck.dt_high;
  header["epoch"] = ck.epoch;
  header["seed"] = ck.seed;
  header["extra"] = ck.extra;
  if (ck.optimizer) header["optimizer"] = {{"config", to_json(ck.optimizer->config)}, {"step", ck.optimizer->step}};
  Json index = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    index.push_back({{"name", name}, {"shape", {t->size()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t->size()) * 8u;
  }
  header["tensors"] = index;

  const std::string text = header.dump();
  std::string blob(kCheckpointMagic, 8);
  detail::put_u64(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset);
  for (const auto& entry : tensors)
    for (Eigen::Index i = 0; i < entry.second->size(); ++i) detail::put_f64(blob, (*entry.second)(i));

  // Write to a sibling file and rename so a crash never leaves a half-written checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  if (blob.size() < 16) throw CorruptCheckpointError("file too short");
  if (blob.compare(0, 8, kCheckpointMagic) != 0) {
    if (blob.compare(0, 7, "MPDCKPT") == 0) throw CheckpointVersionError("found '" + blob.substr(0, 8) + "'");
    throw CorruptCheckpointError("bad magic");
  }
  const std::uint64_t header_len = detail::get_u64(bytes + 8);
  if (header_len > blob.size() - 16) throw CorruptCheckpointError("header length exceeds file size");
  Json header;
  try {
    header = Json::parse(blob.begin() + 16, blob.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const Json::exception& e) {
    throw CorruptCheckpointError(std::string("header is not valid JSON: ") + e.what());
  }
  const std::size_t data_start = 16 + header_len;

  Checkpoint ck;
  try {
    if (header.at("format").get<std::string>() != "MPDCKPT1") throw CheckpointVersionError("header format field");
    ck.task = header.at("task").get<std::string>();
    Architecture arch;
    overlay_json(header.at("architecture"), arch);
    arch.validate();
    overlay_json(header.at("prodmp"), ck.prodmp);
    overlay_json(header.at("noise"), ck.noise);
    ck.dt_low = header.at("dt_low").get<double>();
    ck.dt_high = header.at("dt_high").get<double>();
    ck.epoch = header.at("epoch").get<int>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.extra = header.value("extra", Json::object());

    ck.params.arch = arch;
    ck.params.net = Mlp(arch.layer_dims());
    std::vector<detail::TensorRef> wanted{
        {"net.parameters", &ck.params.net.parameters(), {ck.params.net.parameter_count()}},
        {"action_norm.offset", &ck.params.action_norm.offset, {arch.dof}},
        {"action_norm.scale", &ck.params.action_norm.scale, {arch.dof}},
        {"obs_norm.offset", &ck.params.obs_norm.offset, {arch.obs_dim}},
        {"obs_norm.scale", &ck.params.obs_norm.scale, {arch.obs_dim}}};
    if (header.contains("optimizer")) {
      AdamWConfig cfg;
      overlay_json(header["optimizer"].at("config"), cfg);
      ck.optimizer = OptimizerState(cfg, ck.params.net.parameter_count());
      ck.optimizer->step = header["optimizer"].at("step").get<long>();
      wanted.push_back({"optimizer.first_moment", &ck.optimizer->first_moment, {ck.params.net.parameter_count()}});
      wanted.push_back({"optimizer.second_moment", &ck.optimizer->second_moment, {ck.params.net.parameter_count()}});
    }
    bool has_training = false;
    for (const auto& e : header.at("tensors")) has_training = has_training || e.at("name") == "train.parameters";
    if (has_training) {
      ck.training_parameters.emplace();
      wanted.push_back({"train.parameters", &*ck.training_parameters, {ck.params.net.parameter_count()}});
    }

    const Json& index = header.at("tensors");
    std::uint64_t total = 0;
    for (const auto& w : wanted) {
      const Json* entry = nullptr;
      for (const auto& e : index)
        if (e.at("name").get<std::string>() == w.name) entry = &e;
      if (entry == nullptr) throw CorruptCheckpointError("missing tensor " + w.name);
      const auto shape = entry->at("shape").get<std::vector<Eigen::Index>>();
      if (shape != w.shape)
        throw DimensionError("tensor " + w.name + " shape does not match the stored architecture");
      const std::uint64_t off = entry->at("offset").get<std::uint64_t>();
      const std::uint64_t count = static_cast<std::uint64_t>(w.shape[0]);
      if (off > blob.size() || data_start + off + count * 8 > blob.size())
        throw CorruptCheckpointError("tensor " + w.name + " extends past end of file (truncated?)");
      w.target->resize(static_cast<Eigen::Index>(count));
      for (std::uint64_t i = 0; i < count; ++i)
        (*w.target)(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(detail::get_u64(bytes + data_start + off + 8 * i));
      total = std::max(total, off + count * 8);
    }
    if (data_start + total != blob.size()) throw CorruptCheckpointError("unexpected trailing bytes");
  } catch (const Json::exception& e) {
    throw CorruptCheckpointError(std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(e.what());
  }
  if (ck.prodmp.dof != ck.params.arch.dof || ck.prodmp.n_basis != ck.params.arch.n_basis)
    throw DimensionError("ProDMP configuration does not match architecture");
  ck.params.validate();
  return ck;
}

// Raises DimensionError when the checkpoint cannot drive a task with these sizes.
inline void require_dimensions(const Checkpoint& ck, int dof, int obs_dim) {
  if (ck.params.arch.dof != dof || ck.params.arch.obs_dim != obs_dim)
    throw DimensionError("checkpoint has dof " + std::to_string(ck.params.arch.dof) + " / obs_dim " +
                         std::to_string(ck.params.arch.obs_dim) + ", runtime expects " + std::to_string(dof) +
                         " / " + std::to_string(obs_dim));
}

}  // namespace mpd::denoiser
