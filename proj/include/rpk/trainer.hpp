#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rpk/errors.hpp"
#include "rpk/image.hpp"
#include "rpk/netgraph.hpp"
#include "rpk/objective.hpp"
#include "rpk/rng.hpp"
#include "rpk/skeleton.hpp"
#include "rpk/toydata.hpp"

// Adversarial training loop: per batch one Adam step on the discriminator
// loss (skipped in L1-only mode), then one on the combined generator
// objective. Images are normalized to [-1,1] inside the trainer to match the
// generator's bounded output. All randomness derives from the run seed.

namespace rpk {

template <typename Scalar>
struct Adam {
  Scalar lr = Scalar(0.0002);
  Scalar beta1 = Scalar(0.5);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  long t = 0;

  void step(ParamStore<Scalar>& ps) {
    ++t;
    const Scalar bc1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(t));
    const Scalar bc2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(t));
    for (auto& e : ps.entries()) {
      if (!e.trainable) continue;
      if (e.m.size() != e.var->val.size()) {
        e.m = Tensor<Scalar>(e.var->val.n(), e.var->val.c(), e.var->val.h(),
                             e.var->val.w());
        e.v = e.m;
      }
      e.m.v = beta1 * e.m.v + (Scalar(1) - beta1) * e.var->grad.v;
      e.v.v = beta2 * e.v.v + (Scalar(1) - beta2) * e.var->grad.v.square();
      e.var->val.v -= lr * (e.m.v / bc1) / ((e.v.v / bc2).sqrt() + eps);
    }
  }
};

struct TrainConfig {
  int batch_size = 3;
  double lr = 0.0002;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int epochs = 50;
  double lambda = 100.0;
  std::uint64_t seed = 0;
  int d_layers = 3;
  int d_base_channels = 64;
  bool use_discriminator = true;
  DownsampleMode downsample_mode = DownsampleMode::strided_conv;
  bool non_saturating = false;
  int jmap_thickness = 3;
  int grid_every = 500;        // sample-grid emission cadence, iterations
  int checkpoint_every = 2000; // periodic checkpoint cadence, iterations

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (lr < 0) throw ConfigError("train: lr must be >= 0");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (jmap_thickness < 1) throw ConfigError("train: jmap thickness must be >= 1");
  }
};

using ModelScalar = float;

struct TrainState {
  TrainConfig tcfg;
  GeneratorConfig gcfg;
  DiscriminatorConfig dcfg;
  KinematicTree tree;
  std::unique_ptr<Generator<ModelScalar>> gen;
  std::unique_ptr<Discriminator<ModelScalar>> disc;
  Adam<ModelScalar> adam_g, adam_d;
  long iteration = 0;
  int epoch = 0;
  int iter_in_epoch = 0;
  Rng master_rng{0};
};

inline TrainState make_train_state(const TrainConfig& tcfg,
                                   const GeneratorConfig& gcfg,
                                   const DiscriminatorConfig& dcfg) {
  tcfg.validate();
  gcfg.validate();
  dcfg.validate();
  TrainState st;
  st.tcfg = tcfg;
  st.gcfg = gcfg;
  st.dcfg = dcfg;
  st.tree = make_default_tree();
  if (gcfg.pose_channels != st.tree.size())
    throw ConfigError("train: pose_channels must match the joint count");
  st.gen = std::make_unique<Generator<ModelScalar>>(gcfg);
  st.disc = std::make_unique<Discriminator<ModelScalar>>(
      dcfg, gcfg.input_channels() + gcfg.image_channels);
  init_parameters(st.gen->params(), derive_seed(tcfg.seed, 1));
  init_parameters(st.disc->params(), derive_seed(tcfg.seed, 2));
  st.adam_g.lr = static_cast<ModelScalar>(tcfg.lr);
  st.adam_g.beta1 = static_cast<ModelScalar>(tcfg.adam_beta1);
  st.adam_g.beta2 = static_cast<ModelScalar>(tcfg.adam_beta2);
  st.adam_d = st.adam_g;
  st.master_rng = Rng(derive_seed(tcfg.seed, 3));
  return st;
}

namespace detail {

// Condition tensor: input image (normalized to [-1,1]) concatenated with the
// target-pose joint map.
inline void fill_condition(Tensor<ModelScalar>& u, int slot, const Image& img,
                           const PoseDescriptor& target_pose,
                           const KinematicTree& tree, const GeneratorConfig& g,
                           int thickness) {
  const int R = g.resolution;
  for (int c = 0; c < 3; ++c) {
    const float* src = img.plane(c);
    ModelScalar* dst = u.plane(slot, c);
    for (int i = 0; i < R * R; ++i) dst[i] = src[i] * 2.0f - 1.0f;
  }
  JointMap jm = rasterize_jmap(target_pose, tree, R, R, thickness);
  for (int c = 0; c < g.pose_channels; ++c) {
    const float* src = jm.channel(c);
    ModelScalar* dst = u.plane(slot, 3 + c);
    std::memcpy(dst, src, sizeof(float) * R * R);
  }
}

inline void fill_target(Tensor<ModelScalar>& v, int slot, const Image& img) {
  const int n = v.h() * v.w();
  for (int c = 0; c < 3; ++c) {
    const float* src = img.plane(c);
    ModelScalar* dst = v.plane(slot, c);
    for (int i = 0; i < n; ++i) dst[i] = src[i] * 2.0f - 1.0f;
  }
}

inline Image denormalize(const Tensor<ModelScalar>& t, int slot) {
  Image img(t.h(), t.w(), 3);
  for (int c = 0; c < 3; ++c) {
    const ModelScalar* src = t.plane(slot, c);
    float* dst = img.plane(c);
    for (int i = 0; i < t.h() * t.w(); ++i)
      dst[i] = std::min(1.0f, std::max(0.0f, (static_cast<float>(src[i]) + 1.0f) / 2.0f));
  }
  return img;
}

}  // namespace detail

// One optimization step over a prepared batch. The discriminator updates on
// detached generator outputs first, then the generator updates against the
// refreshed discriminator.
inline LossReport train_step(TrainState& st, const Tensor<ModelScalar>& u,
                             const Tensor<ModelScalar>& v) {
  LossReport rep;
  auto uc = constant(u);
  auto vc = constant(v);
  FwdCtx ctx;
  ctx.use_batch_stats = true;
  ctx.update_running = true;

  auto gout = st.gen->forward(uc, ctx);
  PatchCritic<ModelScalar> critic = [&](const Var<ModelScalar>& img) {
    return st.disc->forward(concat_c(uc, img), ctx);
  };

  if (st.tcfg.use_discriminator) {
    st.disc->params().zero_grad();
    auto dl = discriminator_loss(critic, vc, gout.images);
    rep.d_loss = static_cast<double>(dl->val.v[0]);
    backward(dl);
    st.adam_d.step(st.disc->params());

    st.gen->params().zero_grad();
    st.disc->params().zero_grad();
    auto total = combined_generator_objective(
        critic, gout.images, vc, static_cast<ModelScalar>(st.tcfg.lambda), &rep,
        st.tcfg.non_saturating);
    backward(total);
    st.adam_g.step(st.gen->params());
  } else {
    st.gen->params().zero_grad();
    std::vector<double> per_stack;
    auto l1 = l1_loss(gout.images, vc, &per_stack);
    auto total = scale(l1, static_cast<ModelScalar>(st.tcfg.lambda));
    rep.l1 = static_cast<double>(l1->val.v[0]);
    rep.g_adv = 0.0;
    rep.d_loss = 0.0;
    rep.total_g = static_cast<double>(total->val.v[0]);
    rep.per_stack_l1 = std::move(per_stack);
    backward(total);
    st.adam_g.step(st.gen->params());
  }

  ++st.iteration;
  if (!std::isfinite(rep.total_g) || !std::isfinite(rep.d_loss))
    throw TrainError("train: non-finite loss at iteration " +
                     std::to_string(st.iteration));
  return rep;
}

// ---- checkpoint serialization -------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

inline void put_array(std::ostream& os, const std::string& name,
                      const Tensor<ModelScalar>& t) {
  put_str(os, name);
  for (int d : t.dims) put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(ModelScalar)));
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string config_snapshot(const TrainState& st) {
  std::ostringstream os;
  const auto& t = st.tcfg;
  const auto& g = st.gcfg;
  const auto& d = st.dcfg;
  os << "batch_size=" << t.batch_size << "\n"
     << "lr=" << detail::fmt_double(t.lr) << "\n"
     << "adam_beta1=" << detail::fmt_double(t.adam_beta1) << "\n"
     << "adam_beta2=" << detail::fmt_double(t.adam_beta2) << "\n"
     << "epochs=" << t.epochs << "\n"
     << "lambda=" << detail::fmt_double(t.lambda) << "\n"
     << "seed=" << t.seed << "\n"
     << "d_layers=" << t.d_layers << "\n"
     << "d_base_channels=" << t.d_base_channels << "\n"
     << "use_discriminator=" << (t.use_discriminator ? 1 : 0) << "\n"
     << "downsample=" << to_string(t.downsample_mode) << "\n"
     << "non_saturating=" << (t.non_saturating ? 1 : 0) << "\n"
     << "jmap_thickness=" << t.jmap_thickness << "\n"
     << "grid_every=" << t.grid_every << "\n"
     << "checkpoint_every=" << t.checkpoint_every << "\n"
     << "stacks=" << g.n_stacks << "\n"
     << "resolution=" << g.resolution << "\n"
     << "image_channels=" << g.image_channels << "\n"
     << "pose_channels=" << g.pose_channels << "\n"
     << "depth=" << g.hourglass.depth << "\n"
     << "feat_channels=" << g.hourglass.feat_channels << "\n"
     << "disc_layers=" << d.n_layers << "\n"
     << "disc_base=" << d.base_channels << "\n";
  return os.str();
}

inline std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline void save_checkpoint(const TrainState& st, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  os.write("RPKCKPT1", 8);
  detail::put_u32(os, 1);
  detail::put_str(os, config_snapshot(st));
  std::ostringstream meta;
  meta << "iteration=" << st.iteration << "\n"
       << "epoch=" << st.epoch << "\n"
       << "iter_in_epoch=" << st.iter_in_epoch << "\n"
       << "adam_g_t=" << st.adam_g.t << "\n"
       << "adam_d_t=" << st.adam_d.t << "\n"
       << "rng=" << st.master_rng.save_state() << "\n";
  detail::put_str(os, meta.str());

  std::uint32_t n_arrays = 0;
  for (const auto* ps : {&st.gen->params(), &st.disc->params()})
    for (const auto& e : ps->entries()) n_arrays += e.trainable ? 3 : 1;
  detail::put_u32(os, n_arrays);
  const char* prefixes[2] = {"gen", "disc"};
  const ParamStore<ModelScalar>* stores[2] = {&st.gen->params(),
                                              &st.disc->params()};
  for (int s = 0; s < 2; ++s)
    for (const auto& e : stores[s]->entries()) {
      detail::put_array(os, std::string(prefixes[s]) + ".param/" + e.name, e.var->val);
      if (e.trainable) {
        Tensor<ModelScalar> zero(e.var->val.n(), e.var->val.c(), e.var->val.h(),
                                 e.var->val.w());
        detail::put_array(os, std::string(prefixes[s]) + ".m/" + e.name,
                          e.m.size() == e.var->val.size() ? e.m : zero);
        detail::put_array(os, std::string(prefixes[s]) + ".v/" + e.name,
                          e.v.size() == e.var->val.size() ? e.v : zero);
      }
    }
  if (!os) throw IoError("save_checkpoint: short write to " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "RPKCKPT1", 8) != 0)
    throw IoError("load_checkpoint: bad magic in " + path);
  if (detail::get_u32(is) != 1)
    throw IoError("load_checkpoint: unsupported version in " + path);
  const auto cfg_kv = parse_kv(detail::get_str(is));
  const auto meta_kv = parse_kv(detail::get_str(is));

  auto geti = [&](const char* k) { return std::stol(cfg_kv.at(k)); };
  auto getd = [&](const char* k) { return std::stod(cfg_kv.at(k)); };
  TrainConfig t;
  t.batch_size = static_cast<int>(geti("batch_size"));
  t.lr = getd("lr");
  t.adam_beta1 = getd("adam_beta1");
  t.adam_beta2 = getd("adam_beta2");
  t.epochs = static_cast<int>(geti("epochs"));
  t.lambda = getd("lambda");
  t.seed = std::stoull(cfg_kv.at("seed"));
  t.d_layers = static_cast<int>(geti("d_layers"));
  t.d_base_channels = static_cast<int>(geti("d_base_channels"));
  t.use_discriminator = geti("use_discriminator") != 0;
  t.downsample_mode = cfg_kv.at("downsample") == "maxpool"
                          ? DownsampleMode::max_pool
                          : DownsampleMode::strided_conv;
  t.non_saturating = geti("non_saturating") != 0;
  t.jmap_thickness = static_cast<int>(geti("jmap_thickness"));
  t.grid_every = static_cast<int>(geti("grid_every"));
  t.checkpoint_every = static_cast<int>(geti("checkpoint_every"));
  GeneratorConfig g;
  g.n_stacks = static_cast<int>(geti("stacks"));
  g.resolution = static_cast<int>(geti("resolution"));
  g.image_channels = static_cast<int>(geti("image_channels"));
  g.pose_channels = static_cast<int>(geti("pose_channels"));
  g.hourglass.depth = static_cast<int>(geti("depth"));
  g.hourglass.feat_channels = static_cast<int>(geti("feat_channels"));
  g.hourglass.in_channels = g.hourglass.feat_channels;
  g.downsample_mode = t.downsample_mode;
  DiscriminatorConfig d;
  d.n_layers = static_cast<int>(geti("disc_layers"));
  d.base_channels = static_cast<int>(geti("disc_base"));

  TrainState st = make_train_state(t, g, d);
  st.iteration = std::stol(meta_kv.at("iteration"));
  st.epoch = static_cast<int>(std::stol(meta_kv.at("epoch")));
  st.iter_in_epoch = static_cast<int>(std::stol(meta_kv.at("iter_in_epoch")));
  st.adam_g.t = std::stol(meta_kv.at("adam_g_t"));
  st.adam_d.t = std::stol(meta_kv.at("adam_d_t"));
  st.master_rng.load_state(meta_kv.at("rng"));

  const std::uint32_t n_arrays = detail::get_u32(is);
  for (std::uint32_t a = 0; a < n_arrays; ++a) {
    const std::string name = detail::get_str(is);
    int dims[4];
    for (int& d_ : dims) d_ = static_cast<int>(detail::get_u32(is));
    Tensor<ModelScalar> t_(dims[0], dims[1], dims[2], dims[3]);
    is.read(reinterpret_cast<char*>(t_.data()),
            static_cast<std::streamsize>(t_.size() * sizeof(ModelScalar)));
    if (!is) throw IoError("load_checkpoint: truncated array data in " + path);

    const auto slash = name.find('/');
    const auto dot = name.find('.');
    if (slash == std::string::npos || dot == std::string::npos || dot > slash)
      throw IoError("load_checkpoint: bad array name: " + name);
    const std::string store_name = name.substr(0, dot);
    const std::string section = name.substr(dot + 1, slash - dot - 1);
    const std::string pname = name.substr(slash + 1);
    ParamStore<ModelScalar>& ps =
        store_name == "gen" ? st.gen->params() : st.disc->params();
    auto* e = ps.find(pname);
    if (!e) throw IoError("load_checkpoint: unknown parameter: " + name);
    if (!e->var->val.same_shape(t_))
      throw IoError("load_checkpoint: shape mismatch for " + name);
    if (section == "param")
      e->var->val = std::move(t_);
    else if (section == "m")
      e->m = std::move(t_);
    else if (section == "v")
      e->v = std::move(t_);
    else
      throw IoError("load_checkpoint: unknown section in " + name);
  }
  return st;
}

// ---- training loop --------------------------------------------------------

inline void append_loss_csv(const std::string& path, long iteration,
                            const LossReport& rep, bool write_header) {
  std::ofstream os(path, write_header ? std::ios::trunc : std::ios::app);
  if (!os) throw IoError("loss log: cannot open " + path);
  if (write_header) os << "iteration,l1,g_adv,d_loss,total_g\n";
  if (iteration >= 0)
    os << iteration << ',' << detail::fmt_double(rep.l1) << ','
       << detail::fmt_double(rep.g_adv) << ',' << detail::fmt_double(rep.d_loss)
       << ',' << detail::fmt_double(rep.total_g) << '\n';
}

// Reposes a [0,1] image already at the model resolution: conditions on the
// image plus the target-pose joint map and returns the final stack's output
// denormalized to [0,1].
inline Image repose(const TrainState& st, const Image& image,
                    const PoseDescriptor& target_pose) {
  const int R = st.gcfg.resolution;
  if (image.h != R || image.w != R || image.c != 3)
    throw DescriptorError("repose: image must be RGB at the model resolution");
  Tensor<ModelScalar> u(1, st.gcfg.input_channels(), R, R);
  detail::fill_condition(u, 0, image, target_pose, st.tree, st.gcfg,
                         st.tcfg.jmap_thickness);
  FwdCtx ctx;  // batch statistics, no running update
  auto out = st.gen->forward(constant(u), ctx);
  return detail::denormalize(out.images.back()->val, 0);
}

struct TrainHooks {
  std::function<void(const TrainState&, const LossReport&)> on_step;
};

// Runs the epoch loop over a directory-backed dataset. Shuffles are derived
// from (seed, epoch), so a checkpoint resumes mid-epoch step-for-step.
inline void train(TrainState& st, const std::vector<Sample>& data,
                  const std::string& out_dir, const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  if (data.empty() && st.tcfg.epochs > 0)
    throw TrainError("train: dataset is empty");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("train: cannot create output directory " + out_dir);
  fs::create_directories(out_dir + "/grids", ec);

  const std::string csv = out_dir + "/loss.csv";
  const bool fresh = st.iteration == 0;
  if (fresh) append_loss_csv(csv, -1, {}, true);

  const int R = st.gcfg.resolution;
  for (const auto& s : data)
    if (s.input_image.h != R || s.input_image.w != R)
      throw TrainError("train: dataset resolution does not match the model");

  while (st.epoch < st.tcfg.epochs) {
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(derive_seed(st.tcfg.seed, 0xE90C + static_cast<std::uint64_t>(st.epoch)));
    shuffle_rng.shuffle(order);

    const int n_batches =
        static_cast<int>((order.size() + st.tcfg.batch_size - 1) / st.tcfg.batch_size);
    for (int b = st.iter_in_epoch; b < n_batches; ++b) {
      const int lo = b * st.tcfg.batch_size;
      const int hi = std::min<int>(lo + st.tcfg.batch_size, static_cast<int>(order.size()));
      Tensor<ModelScalar> u(hi - lo, st.gcfg.input_channels(), R, R);
      Tensor<ModelScalar> v(hi - lo, 3, R, R);
      for (int k = lo; k < hi; ++k) {
        const Sample& s = data[static_cast<std::size_t>(order[k])];
        detail::fill_condition(u, k - lo, s.input_image, s.target_pose, st.tree,
                               st.gcfg, st.tcfg.jmap_thickness);
        detail::fill_target(v, k - lo, s.target_image);
      }

      LossReport rep;
      try {
        rep = train_step(st, u, v);
      } catch (const TrainError&) {
        save_checkpoint(st, out_dir + "/ckpt_diagnostic.rpk");
        throw;
      }
      st.iter_in_epoch = b + 1;
      append_loss_csv(csv, st.iteration, rep, false);
      if (hooks.on_step) hooks.on_step(st, rep);

      if (st.tcfg.grid_every > 0 && st.iteration % st.tcfg.grid_every == 0) {
        FwdCtx ctx;
        auto gout = st.gen->forward(constant(u), ctx);
        std::vector<Image> rows;
        for (int k = 0; k < u.n(); ++k) {
          const Sample& s = data[static_cast<std::size_t>(order[lo + k])];
          std::vector<Image> tiles = {s.input_image, s.target_image};
          for (const auto& img : gout.images)
            tiles.push_back(detail::denormalize(img->val, k));
          rows.push_back(hstack(tiles));
        }
        char name[64];
        std::snprintf(name, sizeof(name), "/grids/iter_%08ld.png", st.iteration);
        write_png(out_dir + name, vstack(rows));
      }
      if (st.tcfg.checkpoint_every > 0 &&
          st.iteration % st.tcfg.checkpoint_every == 0)
        save_checkpoint(st, out_dir + "/ckpt_latest.rpk");
    }
    ++st.epoch;
    st.iter_in_epoch = 0;
  }
  save_checkpoint(st, out_dir + "/ckpt_final.rpk");
}

}  // namespace rpk
