#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfrl/rl/actor_critic.hpp"

namespace hfrl::rl {

// Binary checkpoint:
//   u64 LE  header length, header bytes (JSON: dims, activation, seed, round)
//   u64 LE  parameter count, then that many IEEE-754 f64 LE values (actor, critic)
struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw std::runtime_error("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  const auto& a = c.params.arch;
  nlohmann::json h;
  h["obs_dim"] = a.obs_dim;
  h["hidden"] = a.hidden;
  h["heads"] = a.heads;
  h["activation"] = nn::to_string(a.activation);
  h["actor_params"] = c.params.actor.size();
  h["critic_params"] = c.params.critic.size();
  h["seed"] = c.seed;
  h["round"] = c.round;
  const std::string header = h.dump();
  std::string out;
  detail::put_u64(out, header.size());
  out += header;
  const auto flat = c.params.flatten();
  detail::put_u64(out, flat.size());
  for (double x : flat) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  const auto hlen = detail::get_u64(bytes, pos);
  if (pos + hlen > bytes.size()) throw std::runtime_error("checkpoint: truncated header");
  const auto h = nlohmann::json::parse(bytes.substr(pos, hlen));
  pos += hlen;
  ArchSpec arch;
  arch.obs_dim = h.at("obs_dim").get<std::size_t>();
  arch.hidden = h.at("hidden").get<std::vector<std::size_t>>();
  arch.heads = h.at("heads").get<std::size_t>();
  arch.activation = nn::activation_from_string(h.at("activation").get<std::string>());
  const auto n = detail::get_u64(bytes, pos);
  std::vector<double> flat(n);
  for (auto& x : flat) x = std::bit_cast<double>(detail::get_u64(bytes, pos));
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  Checkpoint c;
  c.params = ModelParams::unflatten(arch, flat);
  c.seed = h.at("seed").get<std::uint64_t>();
  c.round = h.at("round").get<std::uint64_t>();
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  const auto bytes = encode_checkpoint(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hfrl::rl
