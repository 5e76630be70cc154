// tdcdm command-line interface.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 diagnostics
// failure under --strict, 5 internal error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tdcdm/tdcdm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tdcdm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiagnostics = 4;
constexpr int kExitInternal = 5;

struct DiagnosticsFailure : Error {
    using Error::Error;
};

// Settings shared by fit and study.
struct FitOptions {
    std::uint64_t seed = 0;
    std::size_t chains = 3;
    std::size_t burnin = 3000;
    std::size_t keep = 3000;
    std::size_t thin = 1;
    std::string preset = "sim-default";
    std::optional<double> pin_lambda;
    bool baseline = false;
    std::string constraint = "strict";
    std::string gamma10_prior = "shifted";
    std::size_t n_attributes = 2;
    bool store_alpha = false;
};

void add_fit_options(CLI::App* cmd, FitOptions& o, bool seed_required) {
    auto* seed = cmd->add_option("--seed", o.seed, "Random seed");
    if (seed_required) seed->required();
    cmd->add_option("--chains", o.chains, "Number of chains")->check(CLI::PositiveNumber);
    cmd->add_option("--burnin", o.burnin, "Burn-in sweeps per chain")->check(CLI::PositiveNumber);
    cmd->add_option("--keep", o.keep, "Kept draws per chain")->check(CLI::PositiveNumber);
    cmd->add_option("--thin", o.thin, "Thinning interval")->check(CLI::PositiveNumber);
    cmd->add_option("--preset", o.preset, "Prior preset")->check(CLI::IsMember({"sim-default", "empirical-default"}));
    cmd->add_option("--pin-lambda", o.pin_lambda, "Hold lambda fixed at this value");
    cmd->add_flag("--baseline", o.baseline, "Plain Bernoulli(theta) Q prior without text input");
    cmd->add_option("--constraint", o.constraint, "Q support: strict or pure-item")
        ->check(CLI::IsMember({"strict", "pure-item"}));
    cmd->add_option("--gamma10-prior", o.gamma10_prior, "Loss intercept prior: shifted N(-3,1) or standard N(0,1)")
        ->check(CLI::IsMember({"shifted", "standard"}));
}

PriorConfig prior_from(const FitOptions& o) {
    PriorConfig p = PriorConfig::from_preset(o.preset);
    p.gamma10_prior = o.gamma10_prior == "standard" ? Gamma10Prior::Standard : Gamma10Prior::Shifted;
    if (o.pin_lambda) {
        p.lambda_enabled = false;
        p.pinned_lambda = *o.pin_lambda;
    }
    if (o.baseline) p = p.baseline();
    p.validate();
    return p;
}

SamplerConfig sampler_from(const FitOptions& o) {
    SamplerConfig s;
    s.n_chains = o.chains;
    s.n_burnin = o.burnin;
    s.n_keep = o.keep;
    s.thin = o.thin;
    s.seed = o.seed;
    s.constraint = o.constraint == "pure-item" ? ConstraintPolicy::PureItem : ConstraintPolicy::Strict;
    s.store_alpha_draws = o.store_alpha;
    s.validate();
    return s;
}

// Settings that define a model; seeds and paths are excluded so that
// replications of one design share a hash.
json model_config(const PriorConfig& p, SamplerConfig s, std::size_t K) {
    s.seed = 0;
    json j = {{"prior", io::to_json(p)}, {"sampler", io::to_json(s)}, {"K", K}};
    j["sampler"].erase("seed");
    return j;
}

std::string model_name(const PriorConfig& p) { return p.text_prior ? kModelText : kModelBaseline; }

void refuse_overwrite(const fs::path& marker, bool force) {
    if (fs::exists(marker) && !force) {
        throw ConfigError(marker.string() + " already exists; pass --force to overwrite");
    }
}

KdeSampler pool_from_file(const std::string& path) {
    if (path.empty()) return reference_kde();
    const std::string text = io::read_file(path);
    std::vector<double> pts;
    if (fs::path(path).extension() == ".json") {
        for (const auto& e : io::parse_tau(text, path)) pts.push_back(e.tau_raw);
    } else {
        const io::CsvTable t = io::parse_csv(text, path);
        const std::size_t c = t.header.size() == 1 ? 0 : t.column("tau");
        for (std::size_t r = 0; r < t.rows.size(); ++r) pts.push_back(io::parse_double(t.rows[r][c], t.where(r, t.header[c])));
        if (t.header.size() == 1 && t.header[0] != "tau") {
            pts.insert(pts.begin(), io::parse_double(t.header[0], path + ":header"));
        }
    }
    if (pts.size() < 2) throw DataError(path + ": a tau pool needs at least two values");
    return KdeSampler::from_points(std::move(pts));
}

// ---------------------------------------------------------------------------
// tau

struct TauCmd {
    std::string embeddings, out = "tau.json", pool = "per-time";
    double a = 1.0, b = 1.0;
    bool force = false;
};

int run_tau(const TauCmd& c) {
    const io::EmbeddingsFile emb = io::parse_embeddings(io::read_file(c.embeddings), c.embeddings);
    io::TauOptions opt;
    opt.pool = c.pool == "union" ? TauPool::Union : TauPool::PerTime;
    opt.a = c.a;
    opt.b = c.b;
    const json cfg = {{"command", "tau"}, {"pool", c.pool}, {"a", c.a}, {"b", c.b}};
    const io::Meta meta{io::config_hash(cfg), 0, "tau"};
    refuse_overwrite(c.out, c.force);
    io::atomic_write(c.out, io::make_tau_json(emb, opt, meta).dump(2) + "\n");
    std::printf("wrote %s (%zu items)\n", c.out.c_str(), emb.items.size());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimCmd {
    std::size_t n = 800, j = 10, rep = 0;
    std::uint64_t seed = 0;
    bool custom = false, force = false;
    std::string pool, tau_link = "rank", out = "sim";
};

json condition_config(const SimCondition& c, const std::string& pool) {
    return {{"N", c.n_learners}, {"J", c.n_items},  {"T", c.n_times},
            {"K", c.n_attributes}, {"C", c.n_covariates}, {"pool", pool.empty() ? "reference" : pool},
            {"tau_link", c.tau_link == TauLink::Rank ? "rank" : "independent"}};
}

void write_replication(const fs::path& dir, const SimCondition& c, const SimReplication& rep, const io::Meta& meta) {
    io::atomic_write(dir / "responses.csv", io::write_responses_csv(rep.data, meta));
    io::atomic_write(dir / "covariates.csv", io::write_covariates_csv(rep.data, meta));
    io::atomic_write(dir / "tau.json", io::tau_json_from_values(rep.tau, rep.data, meta).dump(2) + "\n");
    io::atomic_write(dir / "truth.json", io::truth_json(c, meta, rep.replication).dump(2) + "\n");
    io::atomic_write(dir / "truth_alpha.csv", io::alpha_csv(rep.alpha, rep.data, meta));
}

int run_simulate(const SimCmd& s) {
    SimCondition c = make_condition(s.n, s.j, s.rep + 1, s.seed, s.custom);
    c.tau_link = s.tau_link == "independent" ? TauLink::Independent : TauLink::Rank;
    const KdeSampler pool = pool_from_file(s.pool);
    const json cfg = {{"command", "simulate"}, {"condition", condition_config(c, s.pool)}, {"replication", s.rep}};
    const io::Meta meta{io::config_hash(cfg), s.seed, "simulate"};
    const fs::path out(s.out);
    refuse_overwrite(out / "truth.json", s.force);
    const SimReplication rep = simulate_replication(c, pool, s.rep);
    write_replication(out, c, rep, meta);
    json full = cfg;
    full["seed"] = s.seed;
    full["meta"] = io::meta_json(meta);
    io::atomic_write(out / "config.json", full.dump(2) + "\n");
    std::printf("wrote %s: N=%zu J=%zu T=%zu replication %zu\n", s.out.c_str(), c.n_learners, c.n_items, c.n_times,
                s.rep);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// fit

struct FitCmd {
    FitOptions o;
    std::string responses, covariates, tau, out = "fit";
    bool strict = false, force = false;
};

int run_fit(const FitCmd& f) {
    const PriorConfig prior = prior_from(f.o);
    const SamplerConfig sampler = sampler_from(f.o);
    std::optional<std::string> cov_text;
    if (!f.covariates.empty()) cov_text = io::read_file(f.covariates);
    const Dataset data = io::read_dataset(io::read_file(f.responses), cov_text, f.responses, f.covariates);
    std::vector<QPriorSignal> signal;
    if (prior.text_prior) {
        if (f.tau.empty()) throw ConfigError("the text prior needs --tau <tau.json> (or pass --baseline)");
        signal = io::signal_for_dataset(io::parse_tau(io::read_file(f.tau), f.tau), data, f.o.n_attributes);
    }
    const json mcfg = model_config(prior, sampler, f.o.n_attributes);
    const io::Meta meta{io::config_hash(mcfg), f.o.seed, "fit"};
    const fs::path out(f.out);
    refuse_overwrite(out / "config.json", f.force);

    const McmcResult res = run_mcmc(data, std::move(signal), f.o.n_attributes, prior, sampler);

    json cfg = mcfg;
    cfg["model"] = model_name(prior);
    cfg["seed"] = f.o.seed;
    cfg["inputs"] = {{"responses", f.responses}, {"covariates", f.covariates}, {"tau", f.tau}};
    cfg["meta"] = io::meta_json(meta);
    io::write_draws(out / "draws", res.draws, meta, sampler.n_burnin + sampler.thin, sampler.thin);
    json dj = io::parse_json(io::read_file(out / "draws" / "draws.json"), "draws.json");
    dj["student_ids"] = data.student_ids();
    io::atomic_write(out / "draws" / "draws.json", dj.dump(2) + "\n");
    io::atomic_write(out / "summary.json", io::summary_json(res.draws, meta).dump(2) + "\n");
    const json diag = io::diagnostics_json(res.diagnostics, meta);
    io::atomic_write(out / "diagnostics.json", diag.dump(2) + "\n");
    io::atomic_write(out / "config.json", cfg.dump(2) + "\n");

    const double max_rhat = res.diagnostics.max_rhat.value_or(std::nan(""));
    std::printf("wrote %s: %zu chains x %zu draws, max R-hat %.4f\n", f.out.c_str(), res.draws.n_chains(),
                res.draws.draws_per_chain(), max_rhat);
    if (f.strict && !(max_rhat <= 1.1)) {
        throw DiagnosticsFailure("max R-hat " + io::format_double(max_rhat) + " exceeds 1.1");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalCmd {
    std::string fit, truth, out;
    bool force = false;
};

int run_eval(const EvalCmd& e) {
    const fs::path fit(e.fit), truth_dir(e.truth);
    if (!fs::exists(fit / "config.json")) throw DataError("no fit found in " + fit.string() + " (missing config.json)");
    const json fcfg = io::parse_json(io::read_file(fit / "config.json"), (fit / "config.json").string());
    const Draws draws = io::read_draws(fit / "draws");
    const json dj = io::parse_json(io::read_file(fit / "draws" / "draws.json"), "draws.json");
    const auto ids = dj.value("student_ids", std::vector<std::string>{});
    if (ids.size() != draws.dims.n_learners) throw DataError("draws.json does not list every learner id");
    const Truth truth = io::read_truth(truth_dir, ids);
    const json tj = io::parse_json(io::read_file(truth_dir / "truth.json"), "truth.json");

    const MetricsReport rep = score_fit(draws, truth);
    const io::Meta meta = io::meta_from_json(fcfg.at("meta"), "config.json");
    const json labels = {{"condition", tj.at("condition").value("label", "custom")},
                         {"replication", tj.value("replication", 0)},
                         {"model", fcfg.value("model", "text")}};
    const fs::path out = e.out.empty() ? fit : fs::path(e.out);
    refuse_overwrite(out / "metrics.json", e.force);
    io::atomic_write(out / "metrics.json", io::metrics_json(rep, {meta.config_hash, meta.seed, "eval"}, labels).dump(2) + "\n");
    std::string csv = io::meta_comment({meta.config_hash, meta.seed, "eval"}) + "condition,replication,model";
    const auto flat = flatten(rep);
    for (const auto& [k, v] : flat) csv += "," + k;
    csv += "\n" + labels["condition"].get<std::string>() + "," + std::to_string(labels["replication"].get<std::size_t>()) +
           "," + labels["model"].get<std::string>();
    for (const auto& [k, v] : flat) csv += "," + io::format_double(v);
    csv += "\n";
    io::atomic_write(out / "metrics.csv", csv);
    std::printf("wrote %s: acc", (out / "metrics.json").string().c_str());
    for (const auto& q : rep.q) std::printf(" %.4f", q.acc);
    std::printf(", par");
    for (double p : rep.par) std::printf(" %.4f", p);
    std::printf("\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportCmd {
    std::string study, out;
    bool allow_mixed = false;
    std::size_t boot = 1000;
};

std::string mean_se(const AggregateRow& r) {
    char buf[64];
    if (r.se) {
        std::snprintf(buf, sizeof buf, "%.3f (%.3f)", r.mean, *r.se);
    } else {
        std::snprintf(buf, sizeof buf, "%.3f (-)", r.mean);
    }
    return buf;
}

std::string render_tables(const std::vector<AggregateRow>& rows) {
    const std::vector<std::pair<std::string, std::vector<std::string>>> tables = {
        {"Q-matrix recovery", {"acc_t1", "acc_t2", "fpr_t1", "fpr_t2", "fnr_t1", "fnr_t2", "pip_true", "pip_false"}},
        {"Attribute profile recovery", {"par_t1", "par_t2", "aar_k1_t1", "aar_k2_t1", "aar_k1_t2", "aar_k2_t2"}},
        {"Parameter recovery (MAE)", {"mae_g", "mae_s", "mae_beta0", "mae_betaZ", "mae_gamma01"}},
        {"Parameter recovery (RMSE)", {"rmse_g", "rmse_s", "rmse_beta0", "rmse_betaZ", "rmse_gamma01"}},
    };
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::map<std::string, const AggregateRow*>> idx;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.condition, r.model);
        if (!idx.count(key)) keys.push_back(key);
        idx[key][r.metric] = &r;
    }
    std::ostringstream os;
    for (const auto& [title, cols] : tables) {
        os << title << "\n";
        os << std::left;
        char cell[64];
        std::snprintf(cell, sizeof cell, "%-14s %-9s", "condition", "model");
        os << cell;
        for (const auto& c : cols) {
            std::snprintf(cell, sizeof cell, " %-16s", c.c_str());
            os << cell;
        }
        os << "\n";
        for (const auto& key : keys) {
            std::snprintf(cell, sizeof cell, "%-14s %-9s", key.first.c_str(), key.second.c_str());
            os << cell;
            for (const auto& c : cols) {
                const auto it = idx[key].find(c);
                const std::string v = it == idx[key].end() ? "NA" : mean_se(*it->second);
                std::snprintf(cell, sizeof cell, " %-16s", v.c_str());
                os << cell;
            }
            os << "\n";
        }
        os << "\n";
    }
    return os.str();
}

int run_report(const ReportCmd& r) {
    const fs::path root(r.study);
    if (!fs::is_directory(root)) throw DataError("study directory not found: " + root.string());
    std::map<std::string, std::set<std::string>> hashes;  // model -> config hashes
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().filename() == "metrics.json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no metrics.json files under " + root.string() + " (run 'tdcdm eval' first)");
    std::vector<AggregateRow> rows;
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::string, std::vector<double>>>> values;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& p : files) {
        const json j = io::parse_json(io::read_file(p), p.string());
        const io::Meta meta = io::meta_from_json(j.at("meta"), p.string());
        const json& labels = j.at("labels");
        const std::string model = labels.value("model", "unknown"), cond = labels.value("condition", "custom");
        hashes[model].insert(meta.config_hash);
        const auto key = std::make_pair(cond, model);
        if (!values.count(key)) order.push_back(key);
        auto& bucket = values[key];
        for (const auto& [name, v] : j.at("flat").items()) {
            auto it = std::find_if(bucket.begin(), bucket.end(), [&](const auto& e) { return e.first == name; });
            if (it == bucket.end()) {
                bucket.emplace_back(name, std::vector<double>{});
                it = bucket.end() - 1;
            }
            it->second.push_back(v.get<double>());
        }
    }
    for (const auto& [model, hs] : hashes) {
        if (hs.size() > 1 && !r.allow_mixed) {
            throw ConfigError("model '" + model + "' has " + std::to_string(hs.size()) +
                              " different config hashes; pass --allow-mixed to aggregate anyway");
        }
    }
    for (const auto& key : order) {
        for (const auto& [metric, v] : values[key]) {
            AggregateRow row{key.first, key.second, metric, 0.0, std::nullopt, v.size()};
            for (double x : v) row.mean += x / static_cast<double>(v.size());
            if (v.size() >= 2) row.se = bootstrap_se(v, r.boot, 1);
            rows.push_back(std::move(row));
        }
    }
    json hash_list = json::object();
    for (const auto& [m, hs] : hashes) hash_list[m] = std::vector<std::string>(hs.begin(), hs.end());
    const io::Meta meta{io::config_hash(hash_list), 0, "report"};
    std::string csv = io::meta_comment(meta) + "condition,model,metric,mean,se,n\n";
    for (const auto& row : rows) {
        csv += row.condition + "," + row.model + "," + row.metric + "," + io::format_double(row.mean) + "," +
               (row.se ? io::format_double(*row.se) : "") + "," + std::to_string(row.n) + "\n";
    }
    const fs::path out = r.out.empty() ? root / "report" : fs::path(r.out);
    io::atomic_write(out / "table.csv", csv);
    const std::string text = render_tables(rows);
    io::atomic_write(out / "table.txt", "config_hash " + meta.config_hash + "\n\n" + text);
    std::cout << text;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// study

struct StudyCmd {
    FitOptions o;
    std::vector<std::size_t> n{800}, j{10};
    std::size_t reps = 5, boot = 1000;
    bool custom = false, force = false, save_draws = false;
    std::string pool, tau_link = "rank", models = "both", out = "study";
};

int run_study_cmd(const StudyCmd& s) {
    StudyConfig cfg;
    for (std::size_t n : s.n) {
        for (std::size_t j : s.j) {
            SimCondition c = make_condition(n, j, s.reps, s.o.seed, s.custom);
            c.tau_link = s.tau_link == "independent" ? TauLink::Independent : TauLink::Rank;
            cfg.conditions.push_back(std::move(c));
        }
    }
    FitOptions text_opts = s.o;
    text_opts.baseline = false;
    cfg.text_prior = prior_from(text_opts);
    cfg.sampler = sampler_from(s.o);
    cfg.pool = pool_from_file(s.pool);
    cfg.n_boot = s.boot;
    cfg.fit_baseline = s.models != "text";
    cfg.fit_text = s.models != "baseline";

    const fs::path out(s.out);
    refuse_overwrite(out / "manifest.json", s.force);
    const PriorConfig base = cfg.text_prior.baseline();
    const std::map<std::string, std::string> model_hash = {
        {kModelText, io::config_hash(model_config(cfg.text_prior, cfg.sampler, 2))},
        {kModelBaseline, io::config_hash(model_config(base, cfg.sampler, 2))}};

    json manifest = {{"seed", s.o.seed}, {"replications", s.reps}, {"config_hashes", model_hash},
                     {"sampler", io::to_json(cfg.sampler)}, {"prior_text", io::to_json(cfg.text_prior)},
                     {"prior_baseline", io::to_json(base)}, {"conditions", json::array()}, {"fits", json::array()}};
    for (const auto& c : cfg.conditions) {
        const json cc = condition_config(c, s.pool);
        json truth = io::truth_json(c, {io::config_hash(cc), c.seed, "study"}, 0);
        truth.erase("replication");
        manifest["conditions"].push_back(truth);
    }
    std::size_t last_rep_written = static_cast<std::size_t>(-1);
    std::string last_cond;
    const auto result = run_study(cfg, [&](const SimCondition& c, const SimReplication& rep, const FitRecord& rec,
                                           const McmcResult& fit) {
        const fs::path rdir = out / c.label() / ("rep" + std::to_string(rep.replication + 1));
        const io::Meta data_meta{io::config_hash(condition_config(c, s.pool)), c.seed, "study"};
        if (last_cond != c.label() || last_rep_written != rep.replication) {
            write_replication(rdir, c, rep, data_meta);
            last_cond = c.label();
            last_rep_written = rep.replication;
        }
        const io::Meta meta{model_hash.at(rec.model), rec.fit_seed, "study"};
        const fs::path mdir = rdir / rec.model;
        const json labels = {{"condition", rec.condition}, {"replication", rec.replication}, {"model", rec.model}};
        io::atomic_write(mdir / "metrics.json", io::metrics_json(rec.metrics, meta, labels).dump(2) + "\n");
        io::atomic_write(mdir / "diagnostics.json", io::diagnostics_json(fit.diagnostics, meta).dump(2) + "\n");
        io::atomic_write(mdir / "summary.json", io::summary_json(fit.draws, meta).dump(2) + "\n");
        if (s.save_draws) io::write_draws(mdir / "draws", fit.draws, meta, cfg.sampler.n_burnin + cfg.sampler.thin, cfg.sampler.thin);
        manifest["fits"].push_back({{"condition", rec.condition}, {"replication", rec.replication}, {"model", rec.model},
                                    {"fit_seed", rec.fit_seed}, {"config_hash", meta.config_hash},
                                    {"max_rhat", rec.max_rhat ? json(*rec.max_rhat) : json(nullptr)}});
        std::printf("%s rep %zu %-8s acc_t1 %.3f par_t1 %.3f max R-hat %.3f\n", rec.condition.c_str(),
                    rec.replication + 1, rec.model.c_str(), rec.metrics.q[0].acc, rec.metrics.par[0],
                    rec.max_rhat.value_or(std::nan("")));
        std::fflush(stdout);
    });
    io::atomic_write(out / "manifest.json", manifest.dump(2) + "\n");
    ReportCmd rc;
    rc.study = s.out;
    rc.boot = s.boot;
    return run_report(rc);
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DiagnosticsFailure*>(&e)) return kExitDiagnostics;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const CapacityError*>(&e)) return kExitConfig;
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const DataError*>(&e) ||
        dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const DegenerateError*>(&e) ||
        dynamic_cast<const DomainError*>(&e)) {
        return kExitData;
    }
    return kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-informed dynamic cognitive diagnosis: tau, simulate, fit, eval, report, study"};
    app.require_subcommand(1);

    TauCmd tau;
    auto* c_tau = app.add_subcommand("tau", "Compute text signals from item embeddings");
    c_tau->add_option("--embeddings", tau.embeddings, "embeddings.json")->required();
    c_tau->add_option("--out", tau.out, "Output tau.json");
    c_tau->add_option("--standardize", tau.pool, "per-time or union")->check(CLI::IsMember({"per-time", "union"}));
    c_tau->add_option("--a", tau.a, "Weight on attribute similarity U in tau*");
    c_tau->add_option("--b", tau.b, "Weight on tau in tau*");
    c_tau->add_flag("--force", tau.force, "Overwrite existing output");

    SimCmd sim;
    auto* c_sim = app.add_subcommand("simulate", "Simulate one replication of a study condition");
    c_sim->add_option("--N", sim.n, "Learners (grid: 800, 1600, 2400)");
    c_sim->add_option("--J", sim.j, "Items per time (grid: 10, 20, 30)");
    c_sim->add_option("--rep", sim.rep, "Replication index (0-based)");
    c_sim->add_option("--seed", sim.seed, "Random seed")->required();
    c_sim->add_flag("--custom", sim.custom, "Allow N and J outside the grid");
    c_sim->add_option("--pool", sim.pool, "Tau pool file (CSV column 'tau' or tau.json)");
    c_sim->add_option("--tau-link", sim.tau_link, "rank or independent")->check(CLI::IsMember({"rank", "independent"}));
    c_sim->add_option("--out", sim.out, "Output directory");
    c_sim->add_flag("--force", sim.force, "Overwrite existing output");

    FitCmd fit;
    auto* c_fit = app.add_subcommand("fit", "Fit the model by MCMC");
    c_fit->add_option("--responses", fit.responses, "responses.csv")->required();
    c_fit->add_option("--covariates", fit.covariates, "covariates.csv");
    c_fit->add_option("--tau", fit.tau, "tau.json (required unless --baseline)");
    c_fit->add_option("--K", fit.o.n_attributes, "Number of attributes")->check(CLI::Range(1, 10));
    add_fit_options(c_fit, fit.o, true);
    c_fit->add_flag("--store-alpha", fit.o.store_alpha, "Also write every attribute draw");
    c_fit->add_flag("--strict", fit.strict, "Exit with code 4 when max R-hat exceeds 1.1");
    c_fit->add_option("--out", fit.out, "Output directory");
    c_fit->add_flag("--force", fit.force, "Overwrite existing output");

    EvalCmd ev;
    auto* c_eval = app.add_subcommand("eval", "Score a fit against a simulated truth");
    c_eval->add_option("--fit", ev.fit, "Fit directory")->required();
    c_eval->add_option("--truth", ev.truth, "Directory with truth.json and truth_alpha.csv")->required();
    c_eval->add_option("--out", ev.out, "Output directory (default: the fit directory)");
    c_eval->add_flag("--force", ev.force, "Overwrite existing output");

    ReportCmd rep;
    auto* c_rep = app.add_subcommand("report", "Aggregate metrics.json files into recovery tables");
    c_rep->add_option("--study", rep.study, "Study directory")->required();
    c_rep->add_option("--out", rep.out, "Output directory (default: <study>/report)");
    c_rep->add_option("--boot", rep.boot, "Bootstrap resamples")->check(CLI::Range(2, 1000000));
    c_rep->add_flag("--allow-mixed", rep.allow_mixed, "Aggregate fits with different config hashes");

    StudyCmd st;
    auto* c_st = app.add_subcommand("study", "Simulate, fit baseline and text models, score and aggregate");
    c_st->add_option("--N", st.n, "Learner counts")->expected(1, -1);
    c_st->add_option("--J", st.j, "Item counts")->expected(1, -1);
    c_st->add_option("--reps", st.reps, "Replications per condition")->check(CLI::PositiveNumber);
    c_st->add_option("--boot", st.boot, "Bootstrap resamples")->check(CLI::Range(2, 1000000));
    add_fit_options(c_st, st.o, true);
    c_st->add_flag("--custom", st.custom, "Allow N and J outside the grid");
    c_st->add_option("--pool", st.pool, "Tau pool file");
    c_st->add_option("--tau-link", st.tau_link, "rank or independent")->check(CLI::IsMember({"rank", "independent"}));
    c_st->add_option("--models", st.models, "both, baseline or text")->check(CLI::IsMember({"both", "baseline", "text"}));
    c_st->add_flag("--save-draws", st.save_draws, "Write draws for every fit");
    c_st->add_option("--out", st.out, "Output directory");
    c_st->add_flag("--force", st.force, "Overwrite existing output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (c_tau->parsed()) return run_tau(tau);
        if (c_sim->parsed()) return run_simulate(sim);
        if (c_fit->parsed()) return run_fit(fit);
        if (c_eval->parsed()) return run_eval(ev);
        if (c_rep->parsed()) return run_report(rep);
        if (c_st->parsed()) return run_study_cmd(st);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    }
    return kExitInternal;
}
