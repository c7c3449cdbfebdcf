#include "pmedit/harness.hpp"

#include "pmedit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace pmedit {

void FactGenOptions::validate() const {
  if (count < 1) throw Error(ErrorKind::InvalidConfig, "fact count must be >= 1");
  if (n_paraphrases < 1) throw Error(ErrorKind::InvalidConfig, "n_paraphrases must be >= 1");
  if (!(para_noise > 0.0) || !std::isfinite(para_noise)) {
    throw Error(ErrorKind::InvalidConfig, "para_noise must be > 0");
  }
  if (neighbor_k < 0) throw Error(ErrorKind::InvalidConfig, "neighbor_k must be >= 0");
  if (pool_size < 0) throw Error(ErrorKind::InvalidConfig, "pool_size must be >= 0");
  if (neighbor_k > effective_pool_size()) {
    throw Error(ErrorKind::InvalidConfig, "neighbor_k exceeds the neighborhood pool size");
  }
  if (!(neighbor_noise > 0.0) || !std::isfinite(neighbor_noise)) {
    throw Error(ErrorKind::InvalidConfig, "neighbor_noise must be > 0");
  }
}

const SyntheticFact& FactSet::at(std::int64_t id) const {
  if (id < 0 || id >= static_cast<std::int64_t>(facts.size())) {
    throw Error(ErrorKind::UnknownFactId, "fact id " + std::to_string(id));
  }
  return facts[id];
}

namespace {

constexpr double kMinTargetDistance = 1e-6;

double cosine(const Vector& a, const Vector& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

}  // namespace

FactSet gen_facts(const ToyModel& model, const FactGenOptions& options) {
  options.validate();
  if (options.layer < 0 || options.layer >= model.num_layers()) {
    throw Error(ErrorKind::InvalidConfig, "fact layer out of range");
  }
  const std::int64_t d = model.d_model();
  const std::int64_t pool = options.effective_pool_size();
  std::mt19937_64 rng(options.seed);

  FactSet set;
  set.options = options;
  set.facts.resize(options.count + pool);

  // All random draws happen serially in a fixed order; forwards run afterwards.
  std::vector<Vector> target_inputs(options.count);
  for (std::int64_t i = 0; i < options.count; ++i) {
    SyntheticFact& f = set.facts[i];
    f.id = i;
    f.editable = true;
    f.x = gaussian_vector(rng, d);
    for (std::int64_t p = 0; p < options.n_paraphrases; ++p) {
      f.paraphrases.push_back(f.x + options.para_noise * gaussian_vector(rng, d));
    }
    target_inputs[i] = gaussian_vector(rng, d);
  }
  std::uniform_int_distribution<std::int64_t> anchor_dist(0, options.count - 1);
  for (std::int64_t j = 0; j < pool; ++j) {
    SyntheticFact& f = set.facts[options.count + j];
    f.id = options.count + j;
    f.editable = false;
    const std::int64_t anchor = anchor_dist(rng);
    f.x = set.facts[anchor].x + options.neighbor_noise * gaussian_vector(rng, d);
    for (std::int64_t p = 0; p < options.n_paraphrases; ++p) {
      f.paraphrases.push_back(f.x + options.para_noise * gaussian_vector(rng, d));
    }
  }

  std::vector<Vector> keys(set.facts.size());
  parallel_for(static_cast<std::int64_t>(set.facts.size()), [&](std::int64_t i) {
    SyntheticFact& f = set.facts[i];
    const ForwardTrace trace = forward(model, f.x);
    f.t_old = trace.output();
    keys[i] = trace.keys[options.layer];
    f.t_new = f.editable ? forward(model, target_inputs[i]).output() : f.t_old;
  });

  for (std::int64_t i = 0; i < options.count; ++i) {
    SyntheticFact& f = set.facts[i];
    while ((f.t_new - f.t_old).norm() <= kMinTargetDistance) {
      f.t_new = forward(model, gaussian_vector(rng, d)).output();
    }
  }

  parallel_for(options.count, [&](std::int64_t i) {
    std::vector<std::pair<double, std::int64_t>> scored;
    scored.reserve(pool);
    for (std::int64_t j = options.count; j < options.count + pool; ++j) {
      scored.emplace_back(cosine(keys[i], keys[j]), j);
    }
    // Highest cosine first, ties by id.
    std::partial_sort(scored.begin(), scored.begin() + options.neighbor_k, scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    auto& ids = set.facts[i].neighbor_ids;
    for (std::int64_t n = 0; n < options.neighbor_k; ++n) ids.push_back(scored[n].second);
  });
  return set;
}

}  // namespace pmedit

namespace pmedit {

namespace {

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vec_from(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

nlohmann::json to_json(const FactSet& set) {
  const auto& o = set.options;
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : set.facts) {
    nlohmann::json paras = nlohmann::json::array();
    for (const auto& p : f.paraphrases) paras.push_back(vec_json(p));
    facts.push_back({{"id", f.id},
                     {"editable", f.editable},
                     {"x", vec_json(f.x)},
                     {"paraphrases", std::move(paras)},
                     {"t_old", vec_json(f.t_old)},
                     {"t_new", vec_json(f.t_new)},
                     {"neighbor_ids", f.neighbor_ids}});
  }
  return {{"options",
           {{"layer", o.layer},
            {"count", o.count},
            {"n_paraphrases", o.n_paraphrases},
            {"para_noise", o.para_noise},
            {"neighbor_k", o.neighbor_k},
            {"pool_size", o.pool_size},
            {"neighbor_noise", o.neighbor_noise},
            {"seed", o.seed}}},
          {"facts", std::move(facts)}};
}

FactSet facts_from_json(const nlohmann::json& j) {
  FactSet set;
  try {
    const auto& o = j.at("options");
    set.options.layer = o.at("layer").get<std::int64_t>();
    set.options.count = o.at("count").get<std::int64_t>();
    set.options.n_paraphrases = o.at("n_paraphrases").get<std::int64_t>();
    set.options.para_noise = o.at("para_noise").get<double>();
    set.options.neighbor_k = o.at("neighbor_k").get<std::int64_t>();
    set.options.pool_size = o.at("pool_size").get<std::int64_t>();
    set.options.neighbor_noise = o.at("neighbor_noise").get<double>();
    set.options.seed = o.at("seed").get<std::uint64_t>();
    set.options.validate();
    for (const auto& fj : j.at("facts")) {
      SyntheticFact f;
      f.id = fj.at("id").get<std::int64_t>();
      f.editable = fj.at("editable").get<bool>();
      f.x = vec_from(fj.at("x"));
      for (const auto& p : fj.at("paraphrases")) f.paraphrases.push_back(vec_from(p));
      f.t_old = vec_from(fj.at("t_old"));
      f.t_new = vec_from(fj.at("t_new"));
      f.neighbor_ids = fj.at("neighbor_ids").get<std::vector<std::int64_t>>();
      set.facts.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, std::string("facts: ") + e.what());
  }
  const auto total = static_cast<std::int64_t>(set.facts.size());
  if (total != set.options.count + set.options.effective_pool_size()) {
    throw Error(ErrorKind::SchemaMismatch, "facts: record count does not match options");
  }
  for (std::int64_t i = 0; i < total; ++i) {
    const auto& f = set.facts[i];
    const auto d = f.x.size();
    if (f.id != i || f.editable != (i < set.options.count) || f.paraphrases.empty() ||
        f.t_old.size() != d || f.t_new.size() != d) {
      throw Error(ErrorKind::SchemaMismatch, "facts: malformed record " + std::to_string(i));
    }
    for (const auto& p : f.paraphrases) {
      if (p.size() != d) throw Error(ErrorKind::SchemaMismatch, "facts: paraphrase dimension");
    }
    for (const auto n : f.neighbor_ids) {
      if (n < 0 || n >= total) throw Error(ErrorKind::SchemaMismatch, "facts: neighbor id out of range");
    }
  }
  return set;
}

}  // namespace pmedit
