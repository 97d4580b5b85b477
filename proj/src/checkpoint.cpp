#include "duet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace duet {

using detail::require;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::from_preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk-s") {
    c.model.n_blocks = 2;
    c.model.h = 48;
  } else if (name == "desk-m") {
    c.model.n_blocks = 4;
    c.model.h = 64;
  } else if (name == "desk-l") {
    c.model.n_blocks = 6;
    c.model.h = 96;
  } else if (name == "paper") {
    // Full-scale setting: 8 blocks, latent width 512, T = 1000 with 50-step
    // deterministic sampling. Far beyond desk budgets; provided as a preset.
    c.model.n_blocks = 8;
    c.model.h = 512;
    c.max_t = 1000;
    c.ddim_steps = 50;
    c.fps = 30;
    c.l_train = 300;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_entries() const {
  return {
      {"preset", preset},
      {"n_blocks", std::to_string(model.n_blocks)},
      {"h", std::to_string(model.h)},
      {"d_pose", std::to_string(model.d_pose)},
      {"d_state", std::to_string(model.d_state)},
      {"expansion", std::to_string(model.expansion)},
      {"conv_k", std::to_string(model.conv_k)},
      {"d_text", std::to_string(model.d_text)},
      {"cond_mode", denoiser::to_string(model.cond_mode)},
      {"cross_mode", denoiser::to_string(model.cross_mode)},
      {"max_t", std::to_string(max_t)},
      {"ddim_steps", std::to_string(ddim_steps)},
      {"guidance_w", fmt_double(guidance_w)},
      {"mask_prob", fmt_double(mask_prob)},
      {"epochs", std::to_string(epochs)},
      {"batch", std::to_string(batch)},
      {"lr", fmt_double(lr)},
      {"cosine_lr", cosine_lr ? "1" : "0"},
      {"clip_norm", fmt_double(clip_norm)},
      {"lambda_vel", fmt_double(lambda_vel)},
      {"lambda_rel", fmt_double(lambda_rel)},
      {"threads", std::to_string(threads)},
      {"n_samples", std::to_string(n_samples)},
      {"l_train", std::to_string(l_train)},
      {"fps", std::to_string(fps)},
      {"seed", std::to_string(seed)},
  };
}

RunConfig RunConfig::from_entries(
    const std::map<std::string, std::string>& entries) {
  RunConfig c;
  auto get = [&](const char* key) -> const std::string& {
    auto it = entries.find(key);
    if (it == entries.end())
      throw std::invalid_argument(std::string("manifest missing key: ") + key);
    return it->second;
  };
  c.preset = get("preset");
  c.model.n_blocks = std::stoi(get("n_blocks"));
  c.model.h = std::stoi(get("h"));
  c.model.d_pose = std::stoi(get("d_pose"));
  c.model.d_state = std::stoi(get("d_state"));
  c.model.expansion = std::stoi(get("expansion"));
  c.model.conv_k = std::stoi(get("conv_k"));
  c.model.d_text = std::stoi(get("d_text"));
  c.model.cond_mode = denoiser::cond_mode_from_string(get("cond_mode"));
  c.model.cross_mode = denoiser::cross_mode_from_string(get("cross_mode"));
  c.max_t = std::stoi(get("max_t"));
  c.ddim_steps = std::stoi(get("ddim_steps"));
  c.guidance_w = std::strtod(get("guidance_w").c_str(), nullptr);
  c.mask_prob = std::strtod(get("mask_prob").c_str(), nullptr);
  c.epochs = std::stoi(get("epochs"));
  c.batch = std::stoi(get("batch"));
  c.lr = std::strtod(get("lr").c_str(), nullptr);
  c.cosine_lr = get("cosine_lr") == "1";
  c.clip_norm = std::strtod(get("clip_norm").c_str(), nullptr);
  c.lambda_vel = std::strtod(get("lambda_vel").c_str(), nullptr);
  c.lambda_rel = std::strtod(get("lambda_rel").c_str(), nullptr);
  c.threads = std::stoi(get("threads"));
  c.n_samples = std::stoi(get("n_samples"));
  c.l_train = std::stoi(get("l_train"));
  c.fps = std::stoi(get("fps"));
  c.seed = std::stoull(get("seed"));
  return c;
}

}  // namespace duet

namespace duet::checkpoint {

using detail::require;

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw motion::io_error("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

double get_f64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw motion::io_error("checkpoint: truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 8;
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

void put_entry(std::string& buf, const std::string& name, const Shape& shape,
               const std::vector<double>& data) {
  put_u32(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put_u32(buf, static_cast<std::uint32_t>(shape.size()));
  for (int e : shape) put_u32(buf, static_cast<std::uint32_t>(e));
  for (double v : data) put_f64(buf, v);
}

struct Entry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

Entry get_entry(const std::string& buf, std::size_t& pos) {
  Entry e;
  std::uint32_t name_len = get_u32(buf, pos);
  if (pos + name_len > buf.size())
    throw motion::io_error("checkpoint: truncated name");
  e.name = buf.substr(pos, name_len);
  pos += name_len;
  std::uint32_t rank = get_u32(buf, pos);
  if (rank > 3) throw motion::io_error("checkpoint: bad rank");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t ext = get_u32(buf, pos);
    e.shape.push_back(static_cast<int>(ext));
    n *= ext;
  }
  e.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) e.data[i] = get_f64(buf, pos);
  return e;
}

}  // namespace

std::string manifest_path(const std::string& checkpoint_path) {
  return checkpoint_path + ".manifest";
}

void save(const std::string& path, TrainState& state) {
  std::string buf = "DUCK";
  put_u32(buf, 1);  // version

  std::vector<std::pair<std::string, Tensor*>> params;
  state.params.visit(
      [&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });

  bool with_opt = !state.adam_m.empty();
  require(!with_opt || state.adam_m.size() == params.size(),
          "checkpoint: optimizer state misaligned");
  std::uint32_t count = static_cast<std::uint32_t>(params.size()) *
                            (with_opt ? 3 : 1) +
                        (with_opt ? 1 : 0);
  put_u32(buf, count);
  for (auto& [name, t] : params) put_entry(buf, name, t->shape(), t->data());
  if (with_opt) {
    for (std::size_t i = 0; i < params.size(); ++i)
      put_entry(buf, "opt.m." + params[i].first, params[i].second->shape(),
                state.adam_m[i]);
    for (std::size_t i = 0; i < params.size(); ++i)
      put_entry(buf, "opt.v." + params[i].first, params[i].second->shape(),
                state.adam_v[i]);
    put_entry(buf, "opt.steps", {1},
              {static_cast<double>(state.adam_steps)});
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw motion::io_error("checkpoint: cannot open " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw motion::io_error("checkpoint: write failed for " + path);

  long long param_count = 0;
  for (auto& [name, t] : params) param_count += t->size();

  std::ofstream mf(manifest_path(path), std::ios::trunc);
  if (!mf) throw motion::io_error("checkpoint: cannot open manifest");
  for (const auto& [k, v] : state.config.to_entries())
    mf << k << " = " << v << "\n";
  mf << "epoch = " << state.epoch << "\n";
  mf << "last_loss = " << fmt_double(state.last_loss) << "\n";
  mf << "data_hash = " << state.data_hash << "\n";
  mf << "param_count = " << param_count << "\n";
}

TrainState load(const std::string& path) {
  std::map<std::string, std::string> entries;
  {
    std::ifstream mf(manifest_path(path));
    if (!mf)
      throw motion::io_error("checkpoint: cannot open " + manifest_path(path));
    std::string line;
    while (std::getline(mf, line)) {
      auto sep = line.find(" = ");
      if (sep == std::string::npos) continue;
      entries[line.substr(0, sep)] = line.substr(sep + 3);
    }
  }

  TrainState state;
  state.config = RunConfig::from_entries(entries);
  state.epoch = entries.count("epoch") ? std::stoi(entries["epoch"]) : 0;
  state.last_loss = entries.count("last_loss")
                        ? std::strtod(entries["last_loss"].c_str(), nullptr)
                        : 0.0;
  state.data_hash = entries.count("data_hash") ? entries["data_hash"] : "";

  Rng init = Rng::substream(state.config.seed, "init");
  state.params = denoiser::DenoiserParams::init(state.config.model, init);

  std::ifstream f(path, std::ios::binary);
  if (!f) throw motion::io_error("checkpoint: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 12 || buf.compare(0, 4, "DUCK") != 0)
    throw motion::io_error("checkpoint: bad magic in " + path);
  std::size_t pos = 4;
  if (get_u32(buf, pos) != 1)
    throw motion::io_error("checkpoint: unsupported version");
  std::uint32_t count = get_u32(buf, pos);

  std::map<std::string, Entry> by_name;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e = get_entry(buf, pos);
    by_name[e.name] = std::move(e);
  }
  if (pos != buf.size()) throw motion::io_error("checkpoint: trailing bytes");

  std::vector<std::pair<std::string, Tensor*>> params;
  state.params.visit(
      [&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw motion::io_error("checkpoint: missing parameter " + name);
    if (it->second.shape != t->shape())
      throw motion::io_error("checkpoint: shape mismatch for " + name);
    t->mutable_data() = it->second.data;
  }

  if (by_name.count("opt.steps")) {
    state.adam_steps =
        static_cast<std::int64_t>(by_name["opt.steps"].data[0]);
    state.adam_m.resize(params.size());
    state.adam_v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto mit = by_name.find("opt.m." + params[i].first);
      auto vit = by_name.find("opt.v." + params[i].first);
      if (mit == by_name.end() || vit == by_name.end())
        throw motion::io_error("checkpoint: incomplete optimizer state");
      state.adam_m[i] = std::move(mit->second.data);
      state.adam_v[i] = std::move(vit->second.data);
    }
  }
  return state;
}

}  // namespace duet::checkpoint
