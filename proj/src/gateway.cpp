#include "langpref/gateway.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <httplib.h>

namespace langpref::gateway {

using io::Json;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Improve: return "improve";
    case Mode::LearnLanguage: return "learn-language";
    case Mode::LearnComparison: return "learn-comparison";
  }
  return "?";
}

std::optional<Mode> mode_from_name(const std::string& name) {
  for (Mode m : {Mode::Improve, Mode::LearnLanguage, Mode::LearnComparison}) {
    if (name == mode_name(m)) return m;
  }
  return std::nullopt;
}

void GatewayConfig::validate() const {
  if (improve_max_iterations < 1 || learn_max_iterations < 1 || rate_every < 1) {
    throw std::invalid_argument("gateway limits must be positive");
  }
  if (reference_w && (!reference_w->allFinite() || reference_w->isZero(0.0))) {
    throw std::invalid_argument("reference reward must be finite and nonzero");
  }
  reward.validate();
}

// Everything sessions read but never write.
struct Precomputed {
  improve::CandidateSet candidates;  // whole pool, ids ascending
  reward::CatalogEmbeddings catalog;
  std::map<std::string, int> catalog_by_text;  // normalized text -> first catalog index
  std::vector<int> start_ids;                  // improve-mode starts
};

namespace {

std::string normalized_text(std::string_view text) {
  std::string out;
  for (const std::string& w : lang::normalize_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// Lowest-reward quarter of the pool under `w`, or every id without one.
std::vector<int> start_subset(const world::TrajectoryPool& pool, const std::optional<world::FeatureVector>& w) {
  std::vector<std::pair<double, int>> ranked;
  for (const world::PoolItem& it : pool.items) {
    ranked.emplace_back(w ? world::true_reward({*w}, it.features) : 0.0, it.trajectory.id);
  }
  std::sort(ranked.begin(), ranked.end());
  const std::size_t keep = w ? std::max<std::size_t>(1, ranked.size() / 4) : ranked.size();
  std::vector<int> ids;
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(ranked[i].second);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Json frame_set(const world::TrajectoryPool& pool, int id) {
  const world::PoolItem& item = pool.by_id(id);
  const world::WorldConfig& c = pool.config;
  Json frames = Json::array();
  for (std::size_t t = 0; t < item.trajectory.states.size(); ++t) {
    const world::State& s = item.trajectory.states[t];
    frames.push_back({{"t", static_cast<double>(t) * c.dt}, {"x", s.x}, {"y", s.y}, {"gripper", s.gripper_open}});
  }
  return {{"id", id},
          {"frames", std::move(frames)},
          {"objects", {{"pan", {c.pan.x(), c.pan.y()}}, {"spoon", {c.spoon.x(), c.spoon.y()}}}},
          {"bounds", {{"x_min", c.x_min}, {"x_max", c.x_max}, {"y_min", c.y_min}, {"y_max", c.y_max}}}};
}

const Json& field(const Json& ev, const char* key) {
  if (!ev.contains(key)) throw ApiError(400, "invalid_event", std::string("event lacks '") + key + "'");
  return ev.at(key);
}

}  // namespace

// State of one session. Every mutation goes through apply(), which live
// requests and replay share, so a replayed log reproduces the session exactly.
class Session {
 public:
  enum class Status { Active, AwaitingConfirmation, Complete, Satisfied };

  Session(const Assets& assets, const Precomputed& pre, const GatewayConfig& cfg, const Json& created)
      : assets_(assets), pre_(pre), cfg_(cfg) {
    id_ = field(created, "session_id").get<std::string>();
    const auto mode = mode_from_name(field(created, "mode").get<std::string>());
    if (!mode) throw ApiError(400, "unknown_mode", "unknown mode");
    mode_ = *mode;
    seed_ = field(created, "seed").get<std::uint64_t>();
    max_iterations_ = field(created, "max_iterations").get<int>();
    sent_at_ = field(created, "t").get<double>();
    draw_ = make_rng(seed_, stream::kSessions);
    query_rng_ = make_rng(seed_, stream::kReward);
    if (mode_ != Mode::Improve) {
      learner_.emplace(static_cast<int>(pre_.candidates.embeddings.cols()), cfg_.reward, seed_);
    }
    if (mode_ == Mode::LearnComparison && pre_.candidates.size() < 2) {
      throw ApiError(409, "pool_too_small", "comparison needs two trajectories");
    }
    log_.push_back(created);
    present_next();
  }

  std::mutex mu;

  const std::string& id() const { return id_; }
  Mode mode() const { return mode_; }
  const Json& log() const { return log_; }
  bool ended() const { return status_ == Status::Complete || status_ == Status::Satisfied; }
  bool awaiting() const { return status_ == Status::AwaitingConfirmation; }

  // Free-text language lookup: exact catalog text, otherwise nearest class by cosine.
  struct Resolved {
    lang::Utterance utterance;
    latent::Embedding psi;
  };

  Resolved resolve(const std::string& text, int catalog_index) const {
    if (catalog_index >= 0) {
      lang::Utterance u = assets_.catalog.at(catalog_index);
      u.text = text;  // as typed; the class and tokens come from the catalog
      return {std::move(u), pre_.catalog.psi.row(catalog_index).transpose()};
    }
    lang::Utterance u;
    u.text = text;
    u.tokens = lang::tokenize(text, assets_.catalog.vocabulary());
    latent::Embedding psi = assets_.encoders.encode_language(u.tokens);
    const lang::Utterance& near = assets_.catalog.at(nearest(psi));
    u.feature = near.feature;
    u.direction = near.direction;
    return {std::move(u), std::move(psi)};
  }

  int nearest(const latent::Embedding& psi) const {
    const Eigen::VectorXd norms = pre_.catalog.psi.rowwise().norm();
    const double pn = psi.norm();
    int best = 0;
    double best_cos = -2.0;
    for (int i = 0; i < static_cast<int>(norms.size()); ++i) {
      const double denom = norms[i] * pn;
      const double c = denom > 0.0 ? pre_.catalog.psi.row(i).dot(psi) / denom : -1.0;
      if (c > best_cos) {
        best_cos = c;
        best = i;
      }
    }
    return best;
  }

  int exact_catalog_index(const std::string& text) const {
    const auto it = pre_.catalog_by_text.find(normalized_text(text));
    return it == pre_.catalog_by_text.end() ? -1 : it->second;
  }

  // Appends an accepted event and folds it into the state.
  void record(Json ev, const Clock& clock) {
    apply(ev);
    if (ev.at("type") == "feedback" || ev.at("type") == "satisfied") {
      ev["responded_at"] = clock();
      sent_at_ = ev["responded_at"].get<double>();
    }
    log_.push_back(ev);
    if (!cfg_.log_dir.empty()) {
      std::ofstream out(cfg_.log_dir / (id_ + ".jsonl"), std::ios::app);
      out << ev.dump() << '\n';
      if (!out) throw std::runtime_error("cannot append to the session log");
    }
  }

  void apply(const Json& ev) {
    const std::string type = field(ev, "type").get<std::string>();
    const double t = field(ev, "t").get<double>();
    if (type == "suggested") {
      pending_ = Pending{field(ev, "original").get<std::string>(), field(ev, "catalog_index").get<int>()};
      status_ = Status::AwaitingConfirmation;
    } else if (type == "feedback") {
      seconds_.push_back(t - sent_at_);
      pending_.reset();
      status_ = Status::Active;
      if (mode_ == Mode::LearnComparison) {
        apply_choice(field(ev, "choice").get<std::string>() == "A");
      } else {
        const Resolved r = resolve(field(ev, "text").get<std::string>(), field(ev, "catalog_index").get<int>());
        if (mode_ == Mode::Improve) {
          apply_improve(r);
        } else {
          apply_language(r);
        }
      }
    } else if (type == "satisfied") {
      seconds_.push_back(t - sent_at_);
      pending_.reset();
      status_ = Status::Satisfied;
      shown_.clear();
    } else if (type == "rating") {
      const int iteration = field(ev, "iteration").get<int>();
      const int value = field(ev, "rating").get<int>();
      RatingRequest& req = request(iteration);
      if (req.rating) audit_.push_back({{"iteration", iteration}, {"previous", *req.rating}, {"rating", value}, {"t", t}});
      req.rating = value;
    } else {
      throw ApiError(400, "invalid_event", "unknown event type '" + type + "'");
    }
    if (ev.contains("responded_at")) sent_at_ = ev.at("responded_at").get<double>();
  }

  struct RatingRequest {
    int iteration = 0;
    int best_id = 0;
    std::optional<int> rating;
  };

  RatingRequest& request(int iteration) {
    for (RatingRequest& r : requests_) {
      if (r.iteration == iteration) return r;
    }
    throw ApiError(409, "no_rating_requested", "no rating was requested at iteration " + std::to_string(iteration));
  }

  std::optional<int> latest_request() const {
    if (requests_.empty()) return std::nullopt;
    return requests_.back().iteration;
  }

  Json view() const {
    Json v;
    v["format_version"] = io::kFormatVersion;
    v["session_id"] = id_;
    v["mode"] = mode_name(mode_);
    v["status"] = status_name();
    v["iteration"] = iteration_;
    v["max_iterations"] = max_iterations_;
    Json shown = Json::array();
    for (int id : shown_) shown.push_back(frame_set(assets_.pool, id));
    v["shown"] = std::move(shown);
    v["per_query_seconds"] = seconds_;
    if (mode_ != Mode::LearnComparison) {
      v["pending_suggestion"] = pending_ ? Json{{"original", pending_->original},
                                                {"catalog_index", pending_->catalog_index},
                                                {"text", assets_.catalog.at(pending_->catalog_index).text}}
                                         : Json(nullptr);
    }
    if (mode_ == Mode::Improve) {
      v["trace"] = trace_;
    } else {
      v["query_count"] = learner_->query_count();
      v["model_digest"] = io::fnv1a_hex(io::params_to_json(learner_->model().params()).dump());
      Json reqs = Json::array();
      Json pending_rating = nullptr;
      for (const RatingRequest& r : requests_) {
        reqs.push_back({{"iteration", r.iteration}, {"best_id", r.best_id},
                        {"rating", r.rating ? Json(*r.rating) : Json(nullptr)}});
        if (!r.rating) {
          pending_rating = {{"iteration", r.iteration}, {"trajectory", frame_set(assets_.pool, r.best_id)}};
        }
      }
      v["rating_requests"] = std::move(reqs);
      v["rate_me"] = std::move(pending_rating);
      v["rating_audit"] = audit_;
    }
    return v;
  }

  Json metrics() const {
    Json m;
    m["session_id"] = id_;
    m["mode"] = mode_name(mode_);
    m["iterations"] = iteration_;
    m["per_query_seconds"] = seconds_;
    Json ratings = Json::array();
    reward::LearningCurve curve{"rating", {}};
    for (const RatingRequest& r : requests_) {
      if (!r.rating) continue;
      ratings.push_back({{"iteration", r.iteration}, {"rating", *r.rating}, {"best_id", r.best_id}});
      curve.points.push_back({r.iteration, static_cast<double>(*r.rating)});
    }
    m["ratings"] = std::move(ratings);
    m["rating_auc"] = curve.points.size() >= 2 ? Json(reward::auc(curve)) : Json(nullptr);
    return m;
  }

 private:
  struct Pending {
    std::string original;
    int catalog_index = 0;
  };

  const char* status_name() const {
    switch (status_) {
      case Status::Active: return "active";
      case Status::AwaitingConfirmation: return "awaiting_confirmation";
      case Status::Complete: return "complete";
      case Status::Satisfied: return "satisfied";
    }
    return "?";
  }

  int draw_id() {
    std::uniform_int_distribution<std::size_t> pick(0, pre_.candidates.size() - 1);
    return pre_.candidates.ids[pick(draw_)];
  }

  void present_next() {
    shown_.clear();
    switch (mode_) {
      case Mode::Improve: {
        std::uniform_int_distribution<std::size_t> pick(0, pre_.start_ids.size() - 1);
        shown_.push_back(pre_.start_ids[pick(draw_)]);
        break;
      }
      case Mode::LearnLanguage:
        shown_.push_back(draw_id());
        break;
      case Mode::LearnComparison: {
        const int a = draw_id();
        int b = draw_id();
        while (b == a) b = draw_id();
        shown_ = {a, b};
        break;
      }
    }
  }

  const latent::Embedding phi(int id) const {
    return pre_.candidates.embeddings.row(static_cast<Eigen::Index>(pre_.candidates.row_of(id))).transpose();
  }

  void apply_improve(const Resolved& r) {
    const int current = shown_.front();
    const std::optional<int> excluded = cfg_.improver.tabu ? previous_ : std::nullopt;
    const improve::StepResult step = improve::improve_step(pre_.candidates, current, r.psi, cfg_.improver, excluded);
    ++iteration_;
    trace_.push_back({{"iteration", iteration_}, {"shown_id", current}, {"utterance", r.utterance.text},
                      {"chosen_id", step.chosen_id}, {"objective", step.objective}});
    previous_ = current;
    shown_ = {step.chosen_id};
    if (iteration_ >= max_iterations_) status_ = Status::Complete;
  }

  void apply_language(const Resolved& r) {
    const int shown = shown_.front();
    learner_->add(reward::make_language_query(shown, phi(shown), r.utterance, r.psi, pre_.catalog,
                                              cfg_.reward.negatives, query_rng_));
    after_query();
  }

  void apply_choice(bool chose_a) {
    reward::ComparisonQuery q;
    q.a_id = shown_[0];
    q.b_id = shown_[1];
    q.chose_a = chose_a;
    q.a = phi(q.a_id);
    q.b = phi(q.b_id);
    learner_->add(std::move(q));
    after_query();
  }

  void after_query() {
    learner_->train();
    ++iteration_;
    if (iteration_ % cfg_.rate_every == 0) {
      const Eigen::VectorXd scores = learner_->model().score(pre_.candidates.embeddings);
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;  // strict keeps the lowest id
      }
      requests_.push_back({iteration_, pre_.candidates.ids[static_cast<std::size_t>(best)], std::nullopt});
    }
    if (iteration_ >= max_iterations_) {
      status_ = Status::Complete;
      shown_.clear();
    } else {
      present_next();
    }
  }

  const Assets& assets_;
  const Precomputed& pre_;
  const GatewayConfig& cfg_;
  std::string id_;
  Mode mode_ = Mode::Improve;
  std::uint64_t seed_ = 0;
  int max_iterations_ = 0;
  Rng draw_;
  Rng query_rng_;
  std::optional<reward::RewardLearner> learner_;

  Status status_ = Status::Active;
  int iteration_ = 0;
  std::vector<int> shown_;
  std::optional<int> previous_;
  std::optional<Pending> pending_;
  double sent_at_ = 0.0;
  std::vector<double> seconds_;
  Json trace_ = Json::array();
  std::vector<RatingRequest> requests_;
  Json audit_ = Json::array();
  Json log_ = Json::array();
};

// ---------------------------------------------------------------------------

Service::Service(std::shared_ptr<const Assets> assets, GatewayConfig cfg, Clock clock)
    : assets_(std::move(assets)), cfg_(std::move(cfg)), clock_(std::move(clock)) {
  if (!assets_) throw std::invalid_argument("gateway needs assets");
  cfg_.validate();
  if (assets_->pool.items.empty()) throw std::invalid_argument("gateway needs a nonempty pool");
  if (assets_->encoders.vocab_size() != assets_->catalog.vocabulary().size()) {
    throw std::invalid_argument("encoder vocabulary does not match the catalog");
  }
  if (!clock_) {
    clock_ = [] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
  }
  if (!cfg_.log_dir.empty()) std::filesystem::create_directories(cfg_.log_dir);
  auto pre = std::make_shared<Precomputed>();
  pre->candidates = improve::CandidateSet::from_pool(assets_->encoders, assets_->pool);
  pre->catalog = reward::CatalogEmbeddings::build(assets_->encoders, assets_->catalog);
  for (int i = 0; i < assets_->catalog.size(); ++i) {
    pre->catalog_by_text.emplace(normalized_text(assets_->catalog.at(i).text), i);
  }
  pre->start_ids = start_subset(assets_->pool, cfg_.reference_w);
  pre_ = std::move(pre);
}

Service::~Service() = default;

std::shared_ptr<Session> Service::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "session_not_found", "no session '" + id + "'");
  return it->second;
}

Json Service::create_session(const Json& body) {
  if (!body.is_object() || !body.contains("mode") || !body.at("mode").is_string()) {
    throw ApiError(400, "unknown_mode", "body must name a mode");
  }
  const auto mode = mode_from_name(body.at("mode").get<std::string>());
  if (!mode) throw ApiError(400, "unknown_mode", "unknown mode '" + body.at("mode").get<std::string>() + "'");

  std::uint64_t index = 0;
  {
    std::lock_guard lock(mu_);
    index = next_++;
  }
  char name[32];
  std::snprintf(name, sizeof name, "s%04llu", static_cast<unsigned long long>(index));
  Json created = {{"type", "created"},
                  {"t", clock_()},
                  {"session_id", name},
                  {"mode", mode_name(*mode)},
                  {"seed", derive_seed(derive_seed(cfg_.seed, stream::kSessions), index)},
                  {"max_iterations", *mode == Mode::Improve ? cfg_.improve_max_iterations : cfg_.learn_max_iterations},
                  {"config_digest", cfg_.config_digest}};
  auto session = std::make_shared<Session>(*assets_, *pre_, cfg_, created);
  if (!cfg_.log_dir.empty()) {
    std::ofstream out(cfg_.log_dir / (std::string(name) + ".jsonl"), std::ios::trunc);
    out << created.dump() << '\n';
  }
  Json view = session->view();
  std::lock_guard lock(mu_);
  sessions_.emplace(name, std::move(session));
  return view;
}

Json Service::get_session(const std::string& id) const {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->view();
}

Json Service::submit_feedback(const std::string& id, const Json& body) {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  const double t = clock_();
  if (!body.is_object()) throw ApiError(400, "invalid_json", "body must be an object");
  if (s->ended()) throw ApiError(409, "session_ended", "session has ended");

  if (s->mode() == Mode::LearnComparison) {
    if (body.contains("text") || body.contains("confirm") || body.contains("satisfied")) {
      throw ApiError(400, "wrong_payload", "comparison sessions take {\"choice\": \"A\"|\"B\"}");
    }
    if (!body.contains("choice") || !body.at("choice").is_string() ||
        (body.at("choice") != "A" && body.at("choice") != "B")) {
      throw ApiError(400, "wrong_payload", "choice must be \"A\" or \"B\"");
    }
    s->record({{"type", "feedback"}, {"t", t}, {"choice", body.at("choice")}}, clock_);
    return s->view();
  }

  if (body.contains("choice")) throw ApiError(400, "wrong_payload", "language sessions take {\"text\": ...}");
  if (body.value("satisfied", false)) {
    if (s->mode() != Mode::Improve) throw ApiError(400, "wrong_payload", "only improve sessions accept satisfied");
    s->record({{"type", "satisfied"}, {"t", t}}, clock_);
    return s->view();
  }
  if (body.value("confirm", false) && !body.contains("text")) {
    if (!s->awaiting()) throw ApiError(409, "nothing_to_confirm", "no suggestion is pending");
    const Json v = s->view();
    const Json& p = v.at("pending_suggestion");
    s->record({{"type", "feedback"}, {"t", t}, {"text", p.at("text")}, {"catalog_index", p.at("catalog_index")},
               {"original", p.at("original")}},
              clock_);
    return s->view();
  }
  if (!body.contains("text") || !body.at("text").is_string()) {
    throw ApiError(400, "wrong_payload", "body must carry text, confirm or satisfied");
  }
  const std::string text = body.at("text").get<std::string>();
  std::vector<int> tokens;
  try {
    tokens = lang::tokenize(text, assets_->catalog.vocabulary());
  } catch (const std::invalid_argument&) {
    throw ApiError(400, "empty_feedback", "feedback has no words");
  }
  if (std::find(tokens.begin(), tokens.end(), lang::Vocabulary::kUnknown) != tokens.end()) {
    const latent::Embedding psi = assets_->encoders.encode_language(tokens);
    s->record({{"type", "suggested"}, {"t", t}, {"original", text}, {"catalog_index", s->nearest(psi)}}, clock_);
    return s->view();
  }
  s->record({{"type", "feedback"}, {"t", t}, {"text", text}, {"catalog_index", s->exact_catalog_index(text)}}, clock_);
  return s->view();
}

Json Service::submit_rating(const std::string& id, const Json& body) {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  const double t = clock_();
  if (!body.is_object() || !body.contains("rating") || !body.at("rating").is_number_integer()) {
    throw ApiError(400, "rating_out_of_range", "rating must be an integer from 1 to 5");
  }
  const int rating = body.at("rating").get<int>();
  if (rating < 1 || rating > 5) throw ApiError(400, "rating_out_of_range", "rating must be an integer from 1 to 5");
  std::optional<int> iteration = s->latest_request();
  if (body.contains("iteration")) {
    if (!body.at("iteration").is_number_integer()) throw ApiError(400, "wrong_payload", "iteration must be an integer");
    iteration = body.at("iteration").get<int>();
  }
  if (!iteration) throw ApiError(409, "no_rating_requested", "no rating has been requested");
  s->request(*iteration);  // validates before logging
  s->record({{"type", "rating"}, {"t", t}, {"iteration", *iteration}, {"rating", rating}}, clock_);
  return s->view();
}

Json Service::session_metrics(const std::string& id) const {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->metrics();
}

Json Service::events(const std::string& id) const {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  return {{"session_id", id}, {"events", s->log()}};
}

Json Service::health() const {
  return {{"status", "ok"}, {"config_digest", cfg_.config_digest}, {"format_version", io::kFormatVersion}};
}

Json Service::replay(const Json& events) const {
  const Json& list = events.is_object() && events.contains("events") ? events.at("events") : events;
  if (!list.is_array() || list.empty() || list.front().value("type", "") != "created") {
    throw ApiError(400, "invalid_event", "a log starts with a created event");
  }
  Session s(*assets_, *pre_, cfg_, list.front());
  for (std::size_t i = 1; i < list.size(); ++i) s.apply(list[i]);
  return s.view();
}

void Service::flush() {
  if (cfg_.log_dir.empty()) return;
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  for (const auto& s : all) {
    std::lock_guard lock(s->mu);
    io::write_json(cfg_.log_dir / (s->id() + ".snapshot.json"), s->view());
  }
}

// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ApiError(400, "invalid_json", ex.what());
  }
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, f(req));
    } catch (const ApiError& ex) {
      send_error(res, ex.status(), ex.code(), ex.what());
    } catch (const std::exception& ex) {
      send_error(res, 500, "internal", ex.what());
    }
  };
}

}  // namespace

Server::Server(Service& service) : service_(service), http_(std::make_unique<httplib::Server>()) {
  Service& s = service_;
  http_->Get("/health", guarded([&s](const httplib::Request&) { return s.health(); }));
  http_->Post("/sessions", guarded([&s](const httplib::Request& req) { return s.create_session(parse_body(req)); }));
  http_->Get(R"(/sessions/([^/]+))",
             guarded([&s](const httplib::Request& req) { return s.get_session(req.matches[1]); }));
  http_->Post(R"(/sessions/([^/]+)/feedback)", guarded([&s](const httplib::Request& req) {
                return s.submit_feedback(req.matches[1], parse_body(req));
              }));
  http_->Post(R"(/sessions/([^/]+)/rating)", guarded([&s](const httplib::Request& req) {
                return s.submit_rating(req.matches[1], parse_body(req));
              }));
  http_->Get(R"(/sessions/([^/]+)/metrics)",
             guarded([&s](const httplib::Request& req) { return s.session_metrics(req.matches[1]); }));
  http_->Get(R"(/sessions/([^/]+)/events)",
             guarded([&s](const httplib::Request& req) { return s.events(req.matches[1]); }));
  http_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "not_found", "no such route");
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = http_->bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!http_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { http_->listen_after_bind(); }

void Server::start_background() {
  thread_ = std::thread([this] { listen(); });
  http_->wait_until_ready();
}

void Server::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace langpref::gateway
