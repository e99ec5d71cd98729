#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rltp/config.hpp"
#include "rltp/env.hpp"
#include "rltp/errors.hpp"
#include "rltp/nn.hpp"
#include "rltp/reward.hpp"
#include "rltp/rng.hpp"
#include "rltp/serialize.hpp"
#include "rltp/state.hpp"

namespace rltp {

// ---------------------------------------------------------------------------
// Dueling network
// ---------------------------------------------------------------------------

// Value and advantage branches share the same input (dense state features and
// the fusion vector). The advantage trunk ends in an inner-product head: its
// output is projected to the action-embedding width and dotted with each
// action's embedding, giving one scalar per action. Q aggregates the branches
// with the advantages centered so that V alone carries the state value.
struct DuelingNet {
  Mlp value;
  Mlp trunk;
  Linear proj;
  Matrix action_emb;  // num_actions x embedding width
  Matrix action_emb_grad;

  static DuelingNet make(int input_dim, const AgentParams& p, int num_actions,
                         Rng& rng) {
    DuelingNet n;
    n.value = Mlp(input_dim, p.value_layers, rng);
    n.trunk = Mlp(input_dim, p.advantage_layers, rng);
    n.proj = Linear(p.advantage_layers.back(), p.action_embedding_dim, rng);
    n.action_emb = Matrix(num_actions, p.action_embedding_dim);
    n.action_emb_grad = Matrix(num_actions, p.action_embedding_dim);
    const double bound =
        1.0 / std::sqrt(static_cast<double>(p.action_embedding_dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < n.action_emb.size(); ++i)
      n.action_emb.data()[i] = u(rng);
    return n;
  }

  int num_actions() const { return action_emb.rows(); }

  struct Cache {
    Mlp::Cache value_cache, trunk_cache;
    Matrix proj_out;  // batch x embedding width
    Matrix adv;       // batch x num_actions, pre-centering
  };

  // Returns Q (batch x num_actions).
  Matrix forward(const Matrix& x, Cache& c) const {
    Matrix v = value.forward(x, &c.value_cache);
    Matrix t = trunk.forward(x, &c.trunk_cache);
    proj.forward(t, c.proj_out);
    matmul_nt(c.proj_out, action_emb, c.adv);
    const int acts = action_emb.rows();
    Matrix q(c.adv.rows(), acts);
    for (int i = 0; i < q.rows(); ++i) {
      const double* ai = c.adv.row(i);
      double mean = 0.0;
      for (int a = 0; a < acts; ++a) mean += ai[a];
      mean /= static_cast<double>(acts);
      double* qi = q.row(i);
      for (int a = 0; a < acts; ++a) qi[a] = v(i, 0) + ai[a] - mean;
    }
    return q;
  }

  // Accumulates parameter gradients and returns the gradient at the input.
  Matrix backward(const Cache& c, const Matrix& dq) {
    const int acts = action_emb.rows();
    Matrix dv(dq.rows(), 1);
    Matrix dadv(dq.rows(), acts);
    for (int i = 0; i < dq.rows(); ++i) {
      const double* di = dq.row(i);
      double sum = 0.0;
      for (int a = 0; a < acts; ++a) sum += di[a];
      dv(i, 0) = sum;
      const double mean = sum / static_cast<double>(acts);
      double* oi = dadv.row(i);
      for (int a = 0; a < acts; ++a) oi[a] = di[a] - mean;
    }
    Matrix dproj_out;
    matmul_nn(dadv, action_emb, dproj_out);
    matmul_tn_acc(dadv, c.proj_out, action_emb_grad);
    Matrix dtrunk_out;
    proj.backward(c.trunk_cache.acts.back(), dproj_out, dtrunk_out);
    Matrix dx_trunk = trunk.backward(c.trunk_cache, dtrunk_out);
    Matrix dx_value = value.backward(c.value_cache, dv);
    for (std::size_t i = 0; i < dx_trunk.size(); ++i)
      dx_trunk.data()[i] += dx_value.data()[i];
    return dx_trunk;
  }

  void zero_grad() {
    value.zero_grad();
    trunk.zero_grad();
    proj.zero_grad();
    action_emb_grad.fill(0.0);
  }

  void collect(std::vector<Matrix*>& params, std::vector<Matrix*>& grads) {
    value.collect(params, grads);
    trunk.collect(params, grads);
    params.push_back(&proj.w);
    grads.push_back(&proj.dw);
    params.push_back(&proj.b);
    grads.push_back(&proj.db);
    params.push_back(&action_emb);
    grads.push_back(&action_emb_grad);
  }

  void save(BinWriter& w) const {
    save_mlp(w, value);
    save_mlp(w, trunk);
    save_matrix(w, proj.w);
    save_matrix(w, proj.b);
    save_matrix(w, action_emb);
  }

  static DuelingNet load(BinReader& r) {
    DuelingNet n;
    n.value = load_mlp(r);
    n.trunk = load_mlp(r);
    n.proj.w = load_matrix(r);
    n.proj.b = load_matrix(r);
    n.proj.dw = Matrix(n.proj.w.rows(), n.proj.w.cols());
    n.proj.db = Matrix(n.proj.b.rows(), n.proj.b.cols());
    n.action_emb = load_matrix(r);
    n.action_emb_grad = Matrix(n.action_emb.rows(), n.action_emb.cols());
    return n;
  }

  friend bool operator==(const DuelingNet& a, const DuelingNet& b) {
    return a.value == b.value && a.trunk == b.trunk && a.proj.w == b.proj.w &&
           a.proj.b == b.proj.b && a.action_emb == b.action_emb;
  }
};

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

struct TransitionRecord {
  StateVector state;
  StateVector next_state;
  int action_index = 0;
  RewardBreakdown reward;
  bool terminal = false;
};

// Bounded ring; once full, each push overwrites the oldest entry. at(i)
// addresses logical order, oldest first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return buf_.size(); }

  void push(TransitionRecord t) {
    if (buf_.size() < capacity_) {
      buf_.push_back(std::move(t));
    } else {
      buf_[next_] = std::move(t);
      next_ = (next_ + 1) % capacity_;
    }
  }

  const TransitionRecord& at(std::size_t i) const {
    if (i >= buf_.size()) throw DimensionError("replay index out of range");
    if (buf_.size() < capacity_) return buf_[i];
    return buf_[(next_ + i) % capacity_];
  }

  std::vector<const TransitionRecord*> sample(Rng& rng, int batch) const {
    std::vector<const TransitionRecord*> out;
    out.reserve(batch);
    std::uniform_int_distribution<std::size_t> pick(0, buf_.size() - 1);
    for (int i = 0; i < batch; ++i) out.push_back(&buf_[pick(rng)]);
    return out;
  }

  void clear() {
    buf_.clear();
    next_ = 0;
  }

 private:
  std::size_t capacity_;
  std::vector<TransitionRecord> buf_;
  std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

struct TrainCurvePoint {
  std::int64_t episode = 0;
  double cum_reward = 0.0;
  double completion = 0.0;
  double ctr = 0.0;
};

struct TrainResult {
  std::vector<TrainCurvePoint> curve;
};

inline std::string state_digest(const StateVector& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.indices.size(); ++i) {
    if (i) os << ',';
    os << s.indices[i];
  }
  return os.str();
}

class DqnAgent {
 public:
  explicit DqnAgent(const ExperimentConfig& cfg)
      : cfg_(cfg),
        layout_(FeatureLayout::make(cfg)),
        replay_(static_cast<std::size_t>(cfg.agent.replay_capacity)),
        opt_(cfg.agent.learning_rate),
        eta_opt_(cfg.agent.eta_learning_rate) {
    Rng rng = derive_stream(cfg.seed, 0xA6E17);
    for (const FeatureLayout::Feature& f : layout_.features)
      tables_.add(f.name, f.vocab, layout_.embedding_dim, rng);
    input_dim_ = layout_.dense_dim() + 4;
    online_ = DuelingNet::make(input_dim_, cfg.agent, cfg.num_actions(), rng);
    target_ = online_;
    target_tables_ = tables_;
    eta_ = Matrix(1, 4);
    eta_grad_ = Matrix(1, 4);
    for (int k = 0; k < 4; ++k) eta_(0, k) = cfg.agent.eta_init[k];
    if (cfg.agent.eta4_zero) eta_(0, 3) = 0.0;
    actions_ = action_space(cfg);
  }

  const ExperimentConfig& config() const { return cfg_; }
  const FeatureLayout& layout() const { return layout_; }
  const EmbeddingTables& tables() const { return tables_; }
  EmbeddingTables& tables() { return tables_; }
  DuelingNet& online() { return online_; }
  const DuelingNet& online() const { return online_; }
  DuelingNet& target() { return target_; }
  ReplayBuffer& replay() { return replay_; }
  const Matrix& eta() const { return eta_; }
  Matrix& eta() { return eta_; }
  const Matrix& eta_grad() const { return eta_grad_; }
  std::int64_t updates() const { return updates_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t episodes_done() const { return episodes_done_; }
  void bump_env_steps() { ++env_steps_; }
  void bump_episodes_done() { ++episodes_done_; }

  // Swapping the experiment config is only legal when the feature layout is
  // unchanged; otherwise stored embeddings would be silently misread.
  void set_config(const ExperimentConfig& cfg) {
    if (FeatureLayout::make(cfg) != layout_)
      throw CompatibilityError(
          "config is incompatible with the agent's feature layout");
    cfg_ = cfg;
    actions_ = action_space(cfg);
  }

  std::array<double, 4> eta_array() const {
    return {eta_(0, 0), eta_(0, 1), eta_(0, 2), eta_(0, 3)};
  }

  // Dense input row: per-feature embeddings, the two segment vectors, eta.
  void assemble(const StateVector& s, const EmbeddingTables& tabs, Matrix& x,
                int row) const {
    double* out = x.row(row);
    int off = 0;
    const int d = layout_.embedding_dim;
    for (std::size_t f = 0; f < layout_.features.size(); ++f) {
      const double* e = tabs.lookup(layout_.features[f].name, s.indices[f]);
      for (int k = 0; k < d; ++k) out[off + k] = e[k];
      off += d;
    }
    for (int k = 0; k < layout_.segment_dim; ++k) out[off + k] = s.user_vec[k];
    off += layout_.segment_dim;
    for (int k = 0; k < layout_.segment_dim; ++k) out[off + k] = s.ad_vec[k];
    off += layout_.segment_dim;
    for (int k = 0; k < 4; ++k) out[off + k] = eta_(0, k);
  }

  std::vector<double> q_values(const StateVector& s) const {
    Matrix x(1, input_dim_);
    assemble(s, tables_, x, 0);
    DuelingNet::Cache cache;
    Matrix q = online_.forward(x, cache);
    std::vector<double> out(q.row(0), q.row(0) + q.cols());
    for (double v : out)
      if (!std::isfinite(v))
        throw NumericError("non-finite Q value for state [" + state_digest(s) +
                           "]");
    return out;
  }

  Action select_action(const StateVector& s, double explore_eps, Rng& rng) const {
    if (explore_eps > 0.0 && uniform01(rng) < explore_eps) {
      std::uniform_int_distribution<int> pick(0,
                                              static_cast<int>(actions_.size()) - 1);
      return actions_[pick(rng)];
    }
    const std::vector<double> q = q_values(s);
    int best = 0;
    for (int a = 1; a < static_cast<int>(q.size()); ++a)
      if (q[a] > q[best]) best = a;
    return actions_[best];
  }

  // One optimization step on a sampled batch. The target fuses the stored
  // reward breakdown with the current eta and bootstraps from the target
  // network; eta's own gradient flows only through the online input, the
  // target side is held constant. Returns the pre-update loss.
  double td_update(const std::vector<const TransitionRecord*>& batch) {
    if (batch.empty()) throw ValidationError("td_update needs a non-empty batch");
    const int bs = static_cast<int>(batch.size());
    const int acts = online_.num_actions();

    Matrix x(bs, input_dim_), x2(bs, input_dim_);
    for (int i = 0; i < bs; ++i) {
      assemble(batch[i]->state, tables_, x, i);
      assemble(batch[i]->next_state, target_tables_, x2, i);
    }

    DuelingNet::Cache tcache;
    Matrix q2 = target_.forward(x2, tcache);
    DuelingNet::Cache cache;
    Matrix q = online_.forward(x, cache);

    const double gamma = cfg_.gamma;
    Matrix dq(bs, acts);
    double loss = 0.0;
    for (int i = 0; i < bs; ++i) {
      double boot = 0.0;
      if (!batch[i]->terminal) {
        const double* row = q2.row(i);
        boot = row[0];
        for (int a = 1; a < acts; ++a) boot = std::max(boot, row[a]);
      }
      const double target =
          fuse_reward(batch[i]->reward, eta_.row(0)) + gamma * boot;
      const double diff = q(i, batch[i]->action_index) - target;
      loss += diff * diff;
      dq(i, batch[i]->action_index) = 2.0 * diff / static_cast<double>(bs);
    }
    loss /= static_cast<double>(bs);

    online_.zero_grad();
    tables_.zero_grad();
    eta_grad_.fill(0.0);
    Matrix dx = online_.backward(cache, dq);

    const int d = layout_.embedding_dim;
    const int eta_off = layout_.dense_dim();
    for (int i = 0; i < bs; ++i) {
      const double* g = dx.row(i);
      int off = 0;
      for (std::size_t f = 0; f < layout_.features.size(); ++f) {
        tables_.accumulate(layout_.features[f].name, batch[i]->state.indices[f],
                           g + off, d);
        off += d;
      }
      for (int k = 0; k < 4; ++k) eta_grad_(0, k) += g[eta_off + k];
    }
    if (cfg_.agent.eta4_zero) eta_grad_(0, 3) = 0.0;

    std::vector<Matrix*> params, grads;
    online_.collect(params, grads);
    tables_.collect(params, grads);
    std::vector<Matrix*> all_grads = grads;
    all_grads.push_back(&eta_grad_);
    clip_global_norm(all_grads, cfg_.agent.grad_clip);

    opt_.step(params, grads);
    std::vector<Matrix*> ep{&eta_}, eg{&eta_grad_};
    eta_opt_.step(ep, eg);
    for (int k = 0; k < 4; ++k) eta_(0, k) = std::max(eta_(0, k), 0.0);
    if (cfg_.agent.eta4_zero) eta_(0, 3) = 0.0;

    ++updates_;
    if (updates_ % cfg_.agent.target_refresh_updates == 0) {
      target_ = online_;
      target_tables_ = tables_;
    }
    return loss;
  }

  void save(BinWriter& w) const {
    w.put_u64(config_digest(cfg_));
    layout_.save(w);
    save_embeddings(w, tables_);
    save_embeddings(w, target_tables_);
    online_.save(w);
    target_.save(w);
    save_matrix(w, eta_);
    opt_.save(w);
    eta_opt_.save(w);
    w.put_i64(updates_);
    w.put_i64(env_steps_);
    w.put_i64(episodes_done_);
  }

  std::uint64_t saved_digest() const { return saved_digest_; }

  static DqnAgent load(BinReader& r, const ExperimentConfig& cfg) {
    DqnAgent a(cfg);
    a.saved_digest_ = r.get_u64();
    FeatureLayout stored = FeatureLayout::load(r);
    if (stored != a.layout_)
      throw CompatibilityError(
          "stored policy's feature layout does not match the config");
    a.tables_ = load_embeddings(r);
    a.target_tables_ = load_embeddings(r);
    a.online_ = DuelingNet::load(r);
    a.target_ = DuelingNet::load(r);
    a.eta_ = load_matrix(r);
    a.opt_.load(r);
    a.eta_opt_.load(r);
    a.updates_ = r.get_i64();
    a.env_steps_ = r.get_i64();
    a.episodes_done_ = r.get_i64();
    return a;
  }

 private:
  ExperimentConfig cfg_;
  FeatureLayout layout_;
  EmbeddingTables tables_, target_tables_;
  DuelingNet online_, target_;
  ReplayBuffer replay_;
  Matrix eta_, eta_grad_;
  Adam opt_, eta_opt_;
  std::vector<Action> actions_;
  int input_dim_ = 0;
  std::int64_t updates_ = 0;
  std::int64_t env_steps_ = 0;
  std::int64_t episodes_done_ = 0;
  std::uint64_t saved_digest_ = 0;
};

// ---------------------------------------------------------------------------
// Policy artifact
// ---------------------------------------------------------------------------

inline constexpr char kPolicyMagic[9] = "RLTPPOL1";

inline void save_policy(const std::string& path, const DqnAgent& agent) {
  BinWriter w(path, kPolicyMagic, 1);
  agent.save(w);
}

inline DqnAgent load_policy(const std::string& path, const ExperimentConfig& cfg) {
  BinReader r(path, kPolicyMagic, 1);
  return DqnAgent::load(r, cfg);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline double explore_eps_at(const AgentParams& p, std::int64_t episode,
                             std::int64_t episodes) {
  const double span = p.explore_fraction * static_cast<double>(episodes);
  if (span <= 0.0 || static_cast<double>(episode) >= span)
    return p.explore_end;
  const double t = static_cast<double>(episode) / span;
  return p.explore_start + t * (p.explore_end - p.explore_start);
}

// Runs the interaction loop against any environment exposing
// reset(seed, period) / step(Action) / done(). Episodes index both the RNG
// stream and the delivery period, so one seed fixes the whole run.
template <class EnvT>
TrainResult train_agent(DqnAgent& agent, EnvT& env, std::int64_t episodes,
                        std::uint64_t seed, bool anneal = true) {
  const ExperimentConfig& cfg = agent.config();
  const std::vector<Action> actions = action_space(cfg);
  Rng policy_rng = derive_stream(seed, 0xAC7);
  Rng replay_rng = derive_stream(seed, 0xAC8);

  TrainResult res;
  res.curve.reserve(static_cast<std::size_t>(episodes));
  DeliveryStatus status;

  for (std::int64_t e = 0; e < episodes; ++e) {
    const double eps = anneal ? explore_eps_at(cfg.agent, e, episodes)
                              : cfg.agent.explore_end;
    const std::int64_t period = agent.episodes_done();
    env.reset(combine_seed(seed, static_cast<std::uint64_t>(e)), period);
    status.reset();

    double cum_reward = 0.0;
    StateVector s = build_state(agent.layout(), cfg, status, {period, 0});
    for (int i = 0; i < cfg.num_windows; ++i) {
      const Action a = agent.select_action(s, eps, policy_rng);
      const WindowOutcome out = env.step(a);
      const std::int64_t prev_n = status.n_cum();
      status.observe(out);
      const RewardBreakdown rb =
          reward_breakdown(status.n_cum(), prev_n, status.clicks_cum(), cfg);
      const bool terminal = i == cfg.num_windows - 1;
      StateVector s2 =
          terminal ? s : build_state(agent.layout(), cfg, status, {period, i + 1});
      agent.replay().push({s, s2, a.index, rb, terminal});
      cum_reward += fuse_reward(rb, agent.eta().row(0));
      s = std::move(s2);

      agent.bump_env_steps();
      // Gate on buffered transitions, not lifetime steps: a restored agent
      // resumes with an empty buffer and must re-warm it before updating, or
      // the first batches would be tiny and heavily correlated.
      if (agent.replay().size() >=
              static_cast<std::size_t>(
                  std::max(cfg.agent.learning_starts, cfg.agent.batch_size)) &&
          agent.env_steps() % cfg.agent.train_every_steps == 0) {
        const double loss =
            agent.td_update(agent.replay().sample(replay_rng, cfg.agent.batch_size));
        if (!std::isfinite(loss))
          throw NumericError("TD loss diverged at update " +
                             std::to_string(agent.updates()));
      }
    }

    TrainCurvePoint pt;
    pt.episode = agent.episodes_done();
    pt.cum_reward = cum_reward;
    pt.completion =
        static_cast<double>(status.n_cum()) / static_cast<double>(cfg.n_target);
    pt.ctr = status.n_cum() > 0 ? static_cast<double>(status.clicks_cum()) /
                                      static_cast<double>(status.n_cum())
                                : 0.0;
    res.curve.push_back(pt);
    agent.bump_episodes_done();
  }
  return res;
}

// Continues training a restored policy on a (possibly changed) environment.
// The guard runs before any mutation: an incompatible layout leaves the agent
// untouched.
template <class EnvT>
TrainResult incremental_update(DqnAgent& agent, const ExperimentConfig& env_cfg,
                               EnvT& env, std::int64_t episodes,
                               std::uint64_t seed) {
  agent.set_config(env_cfg);
  return train_agent(agent, env, episodes, seed, /*anneal=*/false);
}

// ---------------------------------------------------------------------------
// Curve files
// ---------------------------------------------------------------------------

inline constexpr const char* kTrainCurveHeader = "episode\treward\tcompletion\tctr";

inline void write_train_curve(const std::string& path,
                              const std::vector<TrainCurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open curve file for writing: " + path);
  out << kTrainCurveHeader << '\n';
  out.precision(17);
  for (const TrainCurvePoint& p : curve)
    out << p.episode << '\t' << p.cum_reward << '\t' << p.completion << '\t'
        << p.ctr << '\n';
}

inline std::vector<TrainCurvePoint> read_train_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open curve file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kTrainCurveHeader)
    throw FormatError("bad curve header in " + path);
  std::vector<TrainCurvePoint> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    TrainCurvePoint p;
    if (!(is >> p.episode >> p.cum_reward >> p.completion >> p.ctr))
      throw FormatError("bad curve row in " + path + ": " + line);
    curve.push_back(p);
  }
  return curve;
}

}  // namespace rltp
