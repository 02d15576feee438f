#include "blend/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "blend/ad/checkpoint.hpp"
#include "blend/blending.hpp"
#include "blend/config.hpp"
#include "blend/io.hpp"
#include "blend/parallel.hpp"
#include "blend/rng.hpp"
#include "blend/softlabels.hpp"

namespace blend::experiment {
namespace {

namespace fs = std::filesystem;
using Provenance = std::vector<std::pair<std::string, std::string>>;

std::string short_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::string flow(const YAML::Node& node) {
    YAML::Emitter out;
    out << YAML::Flow << node;
    return out.c_str();
}

template <typename V>
std::vector<V> get_list(const YAML::Node& node, const std::string& key, std::vector<V> fallback) {
    if (!node[key]) return fallback;
    if (!node[key].IsSequence()) throw ConfigError(key, "expected a list");
    try {
        return node[key].as<std::vector<V>>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(key, std::string("wrong element type: ") + e.what());
    }
}

models::ModelConfig model_entry(const YAML::Node& node, const std::string& key, int classes,
                                models::ModelConfig fallback) {
    const auto n = node[key];
    if (!n) return fallback;
    if (n.IsScalar()) {
        try {
            return models::model_config_preset(n.as<std::string>(), classes);
        } catch (const ConfigError& e) {
            throw ConfigError(key, e.what());
        }
    }
    return models::model_config_from_yaml(n, key);
}

bool needs_teacher(const ExperimentSpec& spec) {
    if (!spec.gammas.empty()) return true;
    if (!spec.teacher_store.empty()) return false;
    return std::any_of(spec.lambdas.begin(), spec.lambdas.end(), [](double l) { return l > 0; });
}

double mean(const std::vector<double>& v) {
    return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// (2/3 of the seeds, rounded up): "at least 2 of 3".
int majority(int seeds) { return (2 * seeds + 2) / 3; }

// Train configs validate under "train."/"schedule." names; re-root them.
trainer::TrainConfig scoped_train_config(const YAML::Node& node, trainer::TrainConfig base, const std::string& key) {
    try {
        return trainer::train_config_from_yaml(node, base, key);
    } catch (const ConfigError& e) {
        std::string field = e.field();
        if (field.rfind(key, 0) == 0) throw;
        if (field.rfind("train.", 0) == 0) field = field.substr(6);
        const std::string what = e.what();
        const auto colon = what.find("': ");
        throw ConfigError(key + "." + field, colon == std::string::npos ? what : what.substr(colon + 3));
    }
}

}  // namespace

void ExperimentSpec::validate() const {
    if (name.empty() || name.find_first_of("/\\ ,") != std::string::npos)
        throw ConfigError("name", "must be a non-empty token without separators");
    if (corpus_path.empty()) corpus.validate();
    for (double l : lambdas)
        if (!(l >= 0 && l <= 1)) throw ConfigError("lambdas", "entries must lie in [0,1]");
    for (int c : cs)
        if (c < 1) throw ConfigError("cs", "entries must be positive");
    for (double g : gammas)
        if (!(g >= 0 && g <= 1)) throw ConfigError("gammas", "entries must lie in [0,1]");
    if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds", "duplicate seed");
    if (!(tau > 0 && tau <= 1)) throw ConfigError("tau", "must lie in (0,1]");
    if (self.enabled) {
        if (!(self.lambda > 0 && self.lambda <= 1)) throw ConfigError("self_distillation.lambda", "must lie in (0,1]");
        if (self.c < 1) throw ConfigError("self_distillation.c", "must be positive");
    }
    if (!(prior_smoothing >= 0)) throw ConfigError("prior_smoothing", "must be nonnegative");
    if (models::config_kind(student) == models::ModelKind::Blstm) throw ConfigError("student", "must be a CNN");
    if (models::config_kind(teacher) != models::ModelKind::Blstm) throw ConfigError("teacher", "must be a BLSTM");
    const int k = models::config_classes(student);
    if (models::config_classes(teacher) != k) throw ConfigError("teacher.classes", "differs from student.classes");
    if (corpus_path.empty() && corpus.classes != k) throw ConfigError("student.classes", "differs from corpus.classes");
    student_train.validate();
    teacher_train.validate();
}

YAML::Node to_yaml(const ExperimentSpec& s) {
    YAML::Node n;
    n["name"] = s.name;
    if (s.corpus_path.empty())
        n["corpus"] = corpus::to_yaml(s.corpus);
    else
        n["corpus_path"] = s.corpus_path;
    n["student"] = models::to_yaml(s.student);
    n["teacher"] = models::to_yaml(s.teacher);
    n["student_train"] = trainer::to_yaml(s.student_train);
    n["teacher_train"] = trainer::to_yaml(s.teacher_train);
    n["lambdas"] = s.lambdas;
    n["cs"] = s.cs;
    n["gammas"] = s.gammas;
    n["seeds"] = s.seeds;
    n["tau"] = s.tau;
    YAML::Node self;
    self["enabled"] = s.self.enabled;
    self["lambda"] = s.self.lambda;
    self["c"] = s.self.c;
    n["self_distillation"] = self;
    n["prior_smoothing"] = s.prior_smoothing;
    if (!s.teacher_store.empty()) n["teacher_store"] = s.teacher_store;
    return n;
}

ExperimentSpec spec_from_yaml(const YAML::Node& node) {
    ExperimentSpec s;
    if (!node || node.IsNull()) return s;
    if (!node.IsMap()) throw ConfigError("experiment", "expected a mapping");
    yaml::check_keys(node,
                     {"name", "corpus", "corpus_path", "student", "teacher", "student_train", "teacher_train",
                      "lambdas", "cs", "gammas", "seeds", "tau", "self_distillation", "prior_smoothing",
                      "teacher_store"},
                     "");
    s.name = yaml::get_or<std::string>(node, "name", "", s.name);
    if (node["corpus"]) s.corpus = corpus::corpus_config_from_yaml(node["corpus"], "corpus");
    s.corpus_path = yaml::get_or<std::string>(node, "corpus_path", "", "");
    const int k = s.corpus.classes;
    s.student = model_entry(node, "student", k, models::CnnConfig::vision_desk(k));
    s.teacher = model_entry(node, "teacher", k, models::BlstmConfig::desk(k));
    s.student_train = scoped_train_config(node["student_train"], s.student_train, "student_train");
    s.teacher_train = scoped_train_config(node["teacher_train"], s.teacher_train, "teacher_train");
    s.lambdas = get_list(node, "lambdas", s.lambdas);
    s.cs = get_list(node, "cs", s.cs);
    s.gammas = get_list(node, "gammas", s.gammas);
    s.seeds = get_list(node, "seeds", s.seeds);
    s.tau = yaml::get_or(node, "tau", "", s.tau);
    if (const auto sd = node["self_distillation"]) {
        yaml::check_keys(sd, {"enabled", "lambda", "c"}, "self_distillation");
        s.self.enabled = yaml::get_or(sd, "enabled", "self_distillation", s.self.enabled);
        s.self.lambda = yaml::get_or(sd, "lambda", "self_distillation", s.self.lambda);
        s.self.c = yaml::get_or(sd, "c", "self_distillation", s.self.c);
    }
    s.prior_smoothing = yaml::get_or(node, "prior_smoothing", "", s.prior_smoothing);
    s.teacher_store = yaml::get_or<std::string>(node, "teacher_store", "", "");
    s.validate();
    return s;
}

std::string point_id(const MetricsRow& r) {
    std::string id = r.experiment + "_s" + std::to_string(r.seed);
    if (r.experiment == kEnsemble) return id + "_g" + short_num(r.gamma);
    if (r.experiment == kBlend || r.experiment == kSelf) id += "_l" + short_num(r.lambda) + "_c" + std::to_string(r.c);
    return id;
}

std::unique_ptr<models::Model<float>> train_fresh(const models::ModelConfig& model, const corpus::Corpus& corpus,
                                                  const softlabels::SoftLabelStore* store,
                                                  const trainer::TrainConfig& cfg, trainer::TrainResult* result) {
    if (models::config_classes(model) != corpus.classes())
        throw ConfigError("model.classes", "model predicts " + std::to_string(models::config_classes(model)) +
                                               " classes, corpus has " + std::to_string(corpus.classes()));
    auto m = models::make_model<float>(model);
    m->initialize(derive_seed(cfg.seed, "init"));
    auto r = trainer::train(*m, corpus, store, cfg);
    if (result) *result = std::move(r);
    return m;
}

double mac_factor(const models::ModelConfig& model, const models::ModelConfig& reference) {
    return static_cast<double>(models::forward_macs(model)) / static_cast<double>(models::forward_macs(reference));
}

MetricsRow evaluate_point(models::Model<float>& model, const corpus::Corpus& corpus, const std::string& experiment,
                          std::uint64_t seed, double lambda, int c, double cost_factor, double prior_smoothing,
                          int jobs) {
    const auto posts = metrics::frame_posteriors(model, corpus.validation, jobs);
    const auto labels = metrics::frame_labels(corpus.validation);
    const auto priors = corpus::compute_priors(corpus.train, corpus.classes(), prior_smoothing);
    MetricsRow row{experiment, seed, lambda, c, 0.0, 0.0, 0.0, cost_factor};
    row.fer = metrics::frame_error_rate(std::span<const models::Posteriors>(posts), labels);
    row.wer_proxy = metrics::wer_proxy(posts, corpus.validation, priors);
    return row;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
    spec.validate();
    const std::string spec_text = flow(to_yaml(spec));

    corpus::Corpus corpus;
    if (spec.corpus_path.empty()) {
        corpus = corpus::generate_corpus(spec.corpus);
    } else {
        corpus = corpus::load_corpus(spec.corpus_path);
        if (corpus.classes() != models::config_classes(spec.student))
            throw ConfigError("student.classes", "corpus " + spec.corpus_path + " has " +
                                                     std::to_string(corpus.classes()) + " classes");
    }
    std::optional<softlabels::SoftLabelStore> shared_store;
    if (!spec.teacher_store.empty()) shared_store = softlabels::quantized(softlabels::load_store(spec.teacher_store));

    const bool persist = !options.out_dir.empty();
    const fs::path out(options.out_dir);
    if (persist) {
        fs::create_directories(out / "points");
        fs::create_directories(out / "runs");
        write_text_file((out / "spec.yaml").string(), yaml::emit(to_yaml(spec)));
    }
    std::mutex progress_mu;
    auto progress = [&](const std::string& stage, const std::string& point) {
        if (!options.on_progress) return;
        std::lock_guard lock(progress_mu);
        options.on_progress({stage, point});
    };
    auto provenance = [&](std::uint64_t seed) {
        return Provenance{{"experiment", spec.name}, {"seed", std::to_string(seed)}, {"config", spec_text}};
    };
    auto persist_row = [&](const MetricsRow& row) {
        if (!persist) return;
        const std::vector<MetricsRow> one{row};
        write_text_file((out / "points" / (point_id(row) + ".csv")).string(),
                        metrics::metrics_csv(one, provenance(row.seed)));
    };
    auto train_run = [&](const models::ModelConfig& cfg, trainer::TrainConfig tc, std::uint64_t seed, double lambda,
                         const softlabels::SoftLabelStore* store, const std::string& label) {
        progress("train", label);
        tc.seed = seed;
        tc.lambda = lambda;
        if (options.jobs > 1) tc.jobs = 1;
        trainer::TrainResult result;
        auto model = train_fresh(cfg, corpus, store, tc, &result);
        if (persist) {
            YAML::Node prov;
            prov["experiment"] = spec.name;
            prov["run"] = label;
            prov["seed"] = seed;
            prov["model"] = models::to_yaml(cfg);
            prov["train"] = trainer::to_yaml(tc);
            const std::string text = yaml::emit(prov);
            ad::save_checkpoint((out / "runs" / (label + ".ckpt")).string(),
                                ad::Checkpoint{model->kind(), model->params(), text});
            write_text_file((out / "runs" / (label + ".history.csv")).string(),
                            trainer::history_csv(result, provenance(seed)));
        }
        return model;
    };

    const int jobs = std::max(1, options.jobs);
    const std::size_t n_seeds = spec.seeds.size();
    const bool with_teacher = needs_teacher(spec);
    const double teacher_cost = mac_factor(spec.teacher, spec.student);

    // Phase 1: hard-label baseline CNN and BLSTM teacher per seed.
    std::vector<std::unique_ptr<models::Model<float>>> baselines(n_seeds), teachers(n_seeds);
    parallel_for(n_seeds * 2, jobs, [&](std::size_t i, std::size_t) {
        const std::size_t s = i / 2;
        const std::uint64_t seed = spec.seeds[s];
        if (i % 2 == 0)
            baselines[s] = train_run(spec.student, spec.student_train, seed, 0.0, nullptr,
                                     std::string(kBaseline) + "_s" + std::to_string(seed));
        else if (with_teacher)
            teachers[s] = train_run(spec.teacher, spec.teacher_train, seed, 0.0, nullptr,
                                    std::string(kTeacher) + "_s" + std::to_string(seed));
    });

    ExperimentResult result;
    result.student_parameters = models::parameter_count(spec.student);
    result.teacher_parameters = models::parameter_count(spec.teacher);
    const auto labels = metrics::frame_labels(corpus.validation);
    const auto priors = corpus::compute_priors(corpus.train, corpus.classes(), spec.prior_smoothing);
    std::vector<MetricsRow> baseline_rows(n_seeds), teacher_rows, ensemble_rows;
    std::vector<std::vector<models::Posteriors>> base_posts(n_seeds), teacher_posts(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const auto seed = spec.seeds[s];
        progress("evaluate", std::string(kBaseline) + "_s" + std::to_string(seed));
        base_posts[s] = metrics::frame_posteriors(*baselines[s], corpus.validation, jobs);
        baseline_rows[s] = {kBaseline, seed, 0.0, 0, 0.0,
                            metrics::frame_error_rate(std::span<const models::Posteriors>(base_posts[s]), labels),
                            metrics::wer_proxy(base_posts[s], corpus.validation, priors), 1.0};
        persist_row(baseline_rows[s]);
        if (!with_teacher) continue;
        teacher_posts[s] = metrics::frame_posteriors(*teachers[s], corpus.validation, jobs);
        MetricsRow t{kTeacher, seed, 0.0, 0, 0.0,
                     metrics::frame_error_rate(std::span<const models::Posteriors>(teacher_posts[s]), labels),
                     metrics::wer_proxy(teacher_posts[s], corpus.validation, priors), teacher_cost};
        persist_row(t);
        teacher_rows.push_back(t);
    }
    // Phase 2: posterior-averaging ensembles; no training involved.
    for (std::size_t s = 0; s < n_seeds && with_teacher; ++s) {
        for (double g : spec.gammas) {
            std::vector<models::Posteriors> mix(labels.size());
            for (std::size_t i = 0; i < labels.size(); ++i)
                mix[i] = blending::ensemble_posterior(teacher_posts[s][i], base_posts[s][i], g);
            const double cost = g == 0.0 ? 1.0 : g == 1.0 ? teacher_cost : 1.0 + teacher_cost;
            MetricsRow r{kEnsemble, spec.seeds[s], 0.0, 0, g,
                         metrics::frame_error_rate(std::span<const models::Posteriors>(mix), labels),
                         metrics::wer_proxy(mix, corpus.validation, priors), cost};
            persist_row(r);
            ensemble_rows.push_back(r);
        }
    }

    // Phase 3: students. Stores are rounded to 32 bits so an in-memory run
    // matches one that goes through a store file.
    std::vector<int> caps;
    for (double l : spec.lambdas)
        if (l > 0)
            for (int c : spec.cs) caps.push_back(c);
    std::sort(caps.begin(), caps.end());
    caps.erase(std::unique(caps.begin(), caps.end()), caps.end());

    struct StudentTask {
        std::size_t seed_index;
        double lambda;
        int c;
        bool self;
    };
    std::vector<StudentTask> tasks;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        for (double l : spec.lambdas)
            for (int c : spec.cs)
                if (l > 0) tasks.push_back({s, l, c, false});
        if (spec.self.enabled) tasks.push_back({s, spec.self.lambda, spec.self.c, true});
    }
    // stores[s][c] from the teacher, self_stores[s] from the baseline CNN.
    std::vector<std::map<int, softlabels::SoftLabelStore>> stores(n_seeds);
    std::vector<std::optional<softlabels::SoftLabelStore>> self_stores(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const auto tag = "_s" + std::to_string(spec.seeds[s]);
        if (!caps.empty() && !shared_store) {
            progress("store", std::string(kTeacher) + tag);
            models::Model<float>* t[1] = {teachers[s].get()};
            const double w[1] = {1.0};
            const auto posts = softlabels::teacher_posteriors(t, w, corpus.train, jobs);
            for (int c : caps)
                stores[s].emplace(c, softlabels::quantized(softlabels::store_from_posteriors(
                                         posts, corpus.train, corpus.classes(), c, spec.tau)));
        }
        if (spec.self.enabled) {
            progress("store", std::string(kBaseline) + tag);
            models::Model<float>* t[1] = {baselines[s].get()};
            const double w[1] = {1.0};
            const auto posts = softlabels::teacher_posteriors(t, w, corpus.train, jobs);
            self_stores[s] = softlabels::quantized(
                softlabels::store_from_posteriors(posts, corpus.train, corpus.classes(), spec.self.c, spec.tau));
        }
    }
    std::vector<MetricsRow> student_rows(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t i, std::size_t) {
        const auto& task = tasks[i];
        const auto seed = spec.seeds[task.seed_index];
        MetricsRow key{task.self ? kSelf : kBlend, seed, task.lambda, task.c};
        const softlabels::SoftLabelStore* store =
            task.self ? &*self_stores[task.seed_index]
                      : shared_store ? &*shared_store : &stores[task.seed_index].at(task.c);
        auto model = train_run(spec.student, spec.student_train, seed, task.lambda, store, point_id(key));
        student_rows[i] = evaluate_point(*model, corpus, key.experiment, seed, task.lambda, task.c, 1.0,
                                         spec.prior_smoothing, options.jobs > 1 ? 1 : jobs);
        persist_row(student_rows[i]);
    });

    result.rows = baseline_rows;
    result.rows.insert(result.rows.end(), teacher_rows.begin(), teacher_rows.end());
    result.rows.insert(result.rows.end(), ensemble_rows.begin(), ensemble_rows.end());
    std::size_t next = 0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        for (double l : spec.lambdas)
            for (int c : spec.cs) {
                if (l > 0) {
                    result.rows.push_back(student_rows[next++]);
                } else {
                    MetricsRow r = baseline_rows[s];
                    r.experiment = kBlend;
                    r.c = c;
                    persist_row(r);
                    result.rows.push_back(r);
                }
            }
        if (spec.self.enabled) result.rows.push_back(student_rows[next++]);
    }
    // Self rows go last as a group.
    std::stable_partition(result.rows.begin(), result.rows.end(),
                          [](const MetricsRow& r) { return r.experiment != kSelf; });
    if (persist) {
        write_text_file((out / "points.csv").string(), metrics::metrics_csv(result.rows, provenance(spec.seeds[0])));
    }
    return result;
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
    std::vector<AggregateRow> cells;
    std::vector<std::vector<double>> fers, wers;
    for (const auto& r : rows) {
        auto it = std::find_if(cells.begin(), cells.end(), [&](const AggregateRow& a) {
            return a.experiment == r.experiment && a.lambda == r.lambda && a.c == r.c && a.gamma == r.gamma;
        });
        if (it == cells.end()) {
            cells.push_back({r.experiment, r.lambda, r.c, r.gamma, 0, 0, 0, 0, r.cost_factor});
            fers.emplace_back();
            wers.emplace_back();
            it = cells.end() - 1;
        }
        const auto k = static_cast<std::size_t>(it - cells.begin());
        fers[k].push_back(r.fer);
        wers[k].push_back(r.wer_proxy);
    }
    for (std::size_t k = 0; k < cells.size(); ++k) {
        auto& a = cells[k];
        a.seeds = fers[k].size();
        a.fer_mean = mean(fers[k]);
        a.wer_mean = mean(wers[k]);
        double ss = 0;
        for (double f : fers[k]) ss += (f - a.fer_mean) * (f - a.fer_mean);
        a.fer_std = a.seeds > 1 ? std::sqrt(ss / static_cast<double>(a.seeds - 1)) : 0.0;
    }
    return cells;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows, const Provenance& provenance) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [k, v] : provenance) os << "# " << k << ": " << v << "\n";
    os << "experiment,lambda,C,gamma,seeds,FER_mean,FER_std,WER_proxy_mean,cost_factor\n";
    for (const auto& a : rows)
        os << a.experiment << ',' << a.lambda << ',' << a.c << ',' << a.gamma << ',' << a.seeds << ',' << a.fer_mean
           << ',' << a.fer_std << ',' << a.wer_mean << ',' << a.cost_factor << "\n";
    return os.str();
}

bool TrendReport::ensemble_ok() const { return ensemble_never_worse && ensemble_strict_seeds >= majority(seeds); }

bool TrendReport::blend_ok() const {
    return !blend_wins.empty() &&
           std::all_of(blend_wins.begin(), blend_wins.end(), [&](const auto& w) { return w.second >= majority(seeds); });
}

bool TrendReport::self_ok() const { return self_wins >= majority(seeds) && self_margin < blend_margin; }

bool TrendReport::truncation_ok() const {
    return fer_by_c.size() >= 2 && fer_by_c.back().second > fer_by_c.front().second;
}

TrendReport assess_trends(const ExperimentSpec& spec, const std::vector<MetricsRow>& rows) {
    TrendReport t;
    t.seeds = static_cast<int>(spec.seeds.size());
    auto find = [&](const std::string& exp, std::uint64_t seed, double lambda, int c) -> const MetricsRow* {
        for (const auto& r : rows)
            if (r.experiment == exp && r.seed == seed && r.lambda == lambda && r.c == c) return &r;
        return nullptr;
    };
    const int c_ref = spec.cs.empty() ? 0 : *std::max_element(spec.cs.begin(), spec.cs.end());

    t.ensemble_never_worse = true;
    std::vector<double> self_gain, blend_gain;
    for (auto seed : spec.seeds) {
        const auto* base = find(kBaseline, seed, 0.0, 0);
        if (!base) continue;
        if (const auto* teacher = find(kTeacher, seed, 0.0, 0)) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& r : rows)
                if (r.experiment == kEnsemble && r.seed == seed) best = std::min(best, r.fer);
            const double member = std::min(base->fer, teacher->fer);
            if (best > member) t.ensemble_never_worse = false;
            if (best < member) ++t.ensemble_strict_seeds;
        }
        if (const auto* self = find(kSelf, seed, spec.self.lambda, spec.self.c)) {
            t.self_wins += self->fer < base->fer;
            self_gain.push_back(base->fer - self->fer);
        }
        if (const auto* b = find(kBlend, seed, spec.self.lambda, spec.self.c)) blend_gain.push_back(base->fer - b->fer);
    }
    for (double l : spec.lambdas) {
        if (l <= 0) continue;
        int wins = 0;
        for (auto seed : spec.seeds) {
            const auto* base = find(kBaseline, seed, 0.0, 0);
            const auto* b = find(kBlend, seed, l, c_ref);
            if (base && b && b->fer < base->fer) ++wins;
        }
        t.blend_wins.emplace_back(l, wins);
    }
    t.self_margin = mean(self_gain);
    t.blend_margin = mean(blend_gain);

    double l_ref = spec.self.lambda;
    if (std::find(spec.lambdas.begin(), spec.lambdas.end(), l_ref) == spec.lambdas.end()) {
        const auto it = std::find_if(spec.lambdas.begin(), spec.lambdas.end(), [](double l) { return l > 0; });
        l_ref = it == spec.lambdas.end() ? 0.0 : *it;
    }
    std::vector<int> cs = spec.cs;
    std::sort(cs.rbegin(), cs.rend());
    for (int c : cs) {
        std::vector<double> f;
        for (auto seed : spec.seeds)
            if (const auto* b = find(kBlend, seed, l_ref, c)) f.push_back(b->fer);
        if (!f.empty()) t.fer_by_c.emplace_back(c, mean(f));
    }
    return t;
}

std::string trend_summary(const TrendReport& t) {
    std::ostringstream os;
    os.precision(4);
    os << "ensemble: never worse than best member " << (t.ensemble_never_worse ? "yes" : "no") << ", strictly better in "
       << t.ensemble_strict_seeds << "/" << t.seeds << " seeds\n";
    for (const auto& [l, w] : t.blend_wins) os << "blend lambda=" << l << ": beats baseline in " << w << "/" << t.seeds << " seeds\n";
    os << "self-distillation: beats baseline in " << t.self_wins << "/" << t.seeds << " seeds, mean gain "
       << t.self_margin << " vs blend gain " << t.blend_margin << "\n";
    os << "student FER by C:";
    for (const auto& [c, f] : t.fer_by_c) os << " C=" << c << ":" << f;
    os << "\n";
    return os.str();
}

std::vector<ReportLine> summary_report(const ExperimentSpec& spec, const std::vector<MetricsRow>& rows) {
    const auto cells = aggregate(rows);
    const auto sp = models::parameter_count(spec.student), tp = models::parameter_count(spec.teacher);
    const double tc = mac_factor(spec.teacher, spec.student);
    std::vector<ReportLine> lines;
    auto best = [&](const std::string& exp, bool positive_lambda) -> const AggregateRow* {
        const AggregateRow* b = nullptr;
        for (const auto& a : cells)
            if (a.experiment == exp && (!positive_lambda || a.lambda > 0) && (!b || a.fer_mean < b->fer_mean)) b = &a;
        return b;
    };
    auto setting = [](const AggregateRow& a) {
        return "lambda=" + short_num(a.lambda) + " C=" + std::to_string(a.c);
    };
    if (const auto* a = best(kBaseline, false)) lines.push_back({"CNN", "hard labels", a->fer_mean, a->wer_mean, sp, 1.0});
    if (const auto* a = best(kTeacher, false))
        lines.push_back({"BLSTM", "hard labels", a->fer_mean, a->wer_mean, tp, tc});
    if (const auto* a = best(kEnsemble, false))
        lines.push_back({"BLSTM+CNN ensemble", "gamma=" + short_num(a->gamma), a->fer_mean, a->wer_mean,
                         a->gamma == 0.0 ? sp : a->gamma == 1.0 ? tp : sp + tp, a->cost_factor});
    if (const auto* a = best(kBlend, true))
        lines.push_back({"blended CNN", setting(*a), a->fer_mean, a->wer_mean, sp, 1.0});
    if (const auto* a = best(kSelf, false))
        lines.push_back({"self-distilled CNN", setting(*a), a->fer_mean, a->wer_mean, sp, 1.0});
    return lines;
}

std::string summary_csv(const std::vector<ReportLine>& lines, const Provenance& provenance) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [k, v] : provenance) os << "# " << k << ": " << v << "\n";
    os << "model,setting,FER,WER_proxy,parameters,cost_factor\n";
    for (const auto& l : lines)
        os << l.model << ',' << l.setting << ',' << l.fer << ',' << l.wer_proxy << ',' << l.parameters << ','
           << l.cost_factor << "\n";
    return os.str();
}

}  // namespace blend::experiment
