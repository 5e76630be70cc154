#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "tdcdm/io.hpp"

using namespace tdcdm;
namespace fs = std::filesystem;
using io::json;

namespace {

const io::Meta kMeta{"0123456789abcdef", 42, "test"};

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tdcdm_io_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <class F>
std::string error_of(F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

const char* kEmbeddings = R"({
  "encoder": {"name": "test", "dim": 3},
  "items": [
    {"item_id": "a", "time": 1, "stem": [1, 0, 0], "correct": [0.5, 0.8660254037844386, 0], "distractors": [[0.3, 0.9539392014169457, 0]]},
    {"item_id": "b", "time": 1, "stem": [0, 1, 0], "correct": [0, 1, 0], "distractors": [[1, 0, 0], [0, 0, 1]]},
    {"item_id": "c", "time": 1, "stem": [0, 0, 1], "correct": [1, 0, 0], "distractors": [[0, 0, 1]]}
  ]
})";

}  // namespace

TEST(Numbers, DoublesRoundTripExactly) {
    std::mt19937_64 eng(1);
    std::normal_distribution<double> nd(0.0, 50.0);
    for (int r = 0; r < 5000; ++r) {
        const double x = nd(eng) * std::pow(10.0, static_cast<int>(eng() % 20) - 10);
        ASSERT_EQ(io::parse_double(io::format_double(x), "x"), x);
    }
    EXPECT_THROW(io::parse_double("1.5abc", "x"), ParseError);
    EXPECT_THROW(io::parse_double("", "x"), ParseError);
    EXPECT_THROW(io::parse_int("2.0", "x"), ParseError);
}

TEST(Csv, ParsingAndErrors) {
    const auto t = io::parse_csv("# config_hash=ab,seed=3,command=x\na,b\n1,2\n\n3,4\n", "f.csv");
    ASSERT_TRUE(t.meta);
    EXPECT_EQ(t.meta->config_hash, "ab");
    EXPECT_EQ(t.meta->seed, 3u);
    EXPECT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.lines[1], 5u);
    EXPECT_EQ(t.column("b"), 1u);
    EXPECT_THROW(t.column("z"), ParseError);
    const std::string msg = error_of([] { io::parse_csv("a,b\n1,2,3\n", "f.csv"); });
    EXPECT_NE(msg.find("f.csv:2"), std::string::npos);
    EXPECT_THROW(io::parse_csv("", "f.csv"), ParseError);
    EXPECT_THROW(io::parse_csv("a\n\"x\"\n", "f.csv"), ParseError);
}

TEST(Dataset, RoundTripThroughCsv) {
    Dataset d(4, 3, 2, 2);
    std::mt19937_64 eng(2);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 3; ++j) d.set_y(i, j, t, static_cast<int>(eng() % 2));
        }
    }
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 2; ++c) d.set_z(i, c, nd(eng));
    }
    d.standardize_covariates();
    const std::string resp = io::write_responses_csv(d, kMeta), cov = io::write_covariates_csv(d, kMeta);
    const Dataset back = io::read_dataset(resp, cov);
    ASSERT_EQ(back.learners(), 4u);
    ASSERT_EQ(back.items(), 3u);
    ASSERT_EQ(back.times(), 2u);
    ASSERT_EQ(back.covariates(), 2u);
    EXPECT_EQ(back.student_ids(), d.student_ids());
    EXPECT_EQ(back.item_ids(), d.item_ids());
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(back.y(i, j, t), d.y(i, j, t));
        }
    }
    // Already standardised covariates survive re-standardisation up to rounding.
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(back.z(i, c), d.z(i, c), 1e-12);
    }
    EXPECT_EQ(io::write_responses_csv(back, kMeta), resp);
}

TEST(Dataset, ReadErrors) {
    const std::string head = "student_id,time,item_id,y\n";
    EXPECT_NE(error_of([&] { io::read_dataset(head + "s1,1,i1,2\n", std::nullopt); }).find("0 or 1"), std::string::npos);
    EXPECT_NE(error_of([&] { io::read_dataset(head + "s1,1,i1,1\ns2,1,i2,1\n", std::nullopt); }).find("missing response"),
              std::string::npos);
    EXPECT_NE(error_of([&] { io::read_dataset(head + "s1,1,i1,1\ns1,1,i1,0\n", std::nullopt); }).find("duplicate"),
              std::string::npos);
    EXPECT_THROW(io::read_dataset(head, std::nullopt), DataError);
    EXPECT_THROW(io::read_dataset("student,time,item_id,y\n", std::nullopt), ParseError);
    const std::string ok = head + "s1,1,i1,1\ns2,1,i1,0\n";
    EXPECT_THROW(io::read_dataset(ok, std::string("student_id,z1\ns1,0.5\n")), DataError);
    EXPECT_THROW(io::read_dataset(ok, std::string("student_id,z1\ns1,0.5\ns3,1\n")), DataError);
    EXPECT_THROW(io::read_dataset(ok, std::string("student_id,z1\ns1,0.5\ns2,nan\n")), ParseError);
    EXPECT_THROW(io::read_dataset(ok + "s1,2,i1,1\ns1,2,i2,1\ns2,2,i1,1\ns2,2,i2,1\n", std::nullopt), DataError);
}

TEST(Embeddings, ParseAndTau) {
    const auto emb = io::parse_embeddings(kEmbeddings);
    ASSERT_EQ(emb.items.size(), 3u);
    const json tau = io::make_tau_json(emb, {}, kMeta);
    EXPECT_NEAR(tau["items"][0]["tau_raw"].get<double>(), 0.2, 1e-12);
    EXPECT_NEAR(tau["items"][1]["tau_raw"].get<double>(), 1.0, 1e-12);
    EXPECT_NEAR(tau["items"][2]["tau_raw"].get<double>(), -1.0, 1e-12);
    EXPECT_EQ(tau["standardization"], "per-time");
    const auto entries = io::parse_tau(tau.dump());
    ASSERT_EQ(entries.size(), 3u);
    const auto z = standardize_tau(std::vector<double>{0.2, 1.0, -1.0});
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(entries[n].tau_std, z[n], 1e-12);

    Dataset d(2, 3, 1, 0);
    d.item_ids()[0] = {"c", "a", "b"};
    const auto sig = io::signal_for_dataset(entries, d, 2);
    ASSERT_EQ(sig.size(), 1u);
    EXPECT_EQ(sig[0].at(0, 1), entries[2].tau_std);
    EXPECT_EQ(sig[0].at(1, 0), entries[0].tau_std);
    d.item_ids()[0][2] = "zz";
    EXPECT_NE(error_of([&] { io::signal_for_dataset(entries, d, 2); }).find("'zz'"), std::string::npos);
}

TEST(Embeddings, ParseErrorsNameTheField) {
    json j = json::parse(kEmbeddings);
    j["items"][1].erase("distractors");
    EXPECT_NE(error_of([&] { io::parse_embeddings(j.dump()); }).find("items[1].distractors: missing field"),
              std::string::npos);
    j = json::parse(kEmbeddings);
    j["items"][0]["stem"] = {1, 0};
    EXPECT_THROW(io::parse_embeddings(j.dump()), ParseError);
    j = json::parse(kEmbeddings);
    j["items"][2]["time"] = 0;
    EXPECT_NE(error_of([&] { io::parse_embeddings(j.dump()); }).find("items[2].time"), std::string::npos);
    EXPECT_THROW(io::parse_embeddings("{not json"), ParseError);
    EXPECT_THROW(io::parse_embeddings(R"({"items": []})"), ParseError);
}

TEST(Embeddings, AttributeDescriptionsGiveTauStar) {
    json j = json::parse(kEmbeddings);
    j["attributes"] = {{{"name", "x"}, {"embedding", {1, 0, 0}}}, {{"name", "y"}, {"embedding", {0, 1, 0}}}};
    const auto emb = io::parse_embeddings(j.dump());
    const json tau = io::make_tau_json(emb, {TauPool::PerTime, 0.5, 2.0}, kMeta);
    const auto& row = tau["items"][0];
    const double tstd = row["tau_std"];
    EXPECT_NEAR(row["tau_star"][0].get<double>(), 0.5 * 1.0 + 2.0 * tstd, 1e-12);
    EXPECT_NEAR(row["tau_star"][1].get<double>(), 2.0 * tstd, 1e-12);
    Dataset d(2, 3, 1, 0);
    d.item_ids()[0] = {"a", "b", "c"};
    const auto sig = io::signal_for_dataset(io::parse_tau(tau.dump()), d, 2);
    EXPECT_NEAR(sig[0].at(0, 0), 0.5 + 2.0 * tstd, 1e-12);
}

TEST(Meta, HashAndComment) {
    const json a = {{"x", 1}, {"y", {1, 2}}};
    json b;
    b["y"] = {1, 2};
    b["x"] = 1;
    EXPECT_EQ(io::config_hash(a), io::config_hash(b));
    EXPECT_NE(io::config_hash(a), io::config_hash(json{{"x", 2}, {"y", {1, 2}}}));
    EXPECT_EQ(io::config_hash(a).size(), 16u);
    const auto m = io::meta_from_comment(io::meta_comment(kMeta).substr(0, io::meta_comment(kMeta).size() - 1));
    ASSERT_TRUE(m);
    EXPECT_EQ(m->config_hash, kMeta.config_hash);
    EXPECT_EQ(m->seed, kMeta.seed);
    EXPECT_EQ(m->command, kMeta.command);
    EXPECT_EQ(io::meta_from_json(io::meta_json(kMeta), "x").seed, 42u);
    EXPECT_THROW(io::meta_from_json(json{{"seed", 1}}, "x"), ParseError);
}

TEST(Draws, RoundTripThroughDirectory) {
    const auto c = make_condition(30, 10, 1, 3, true);
    const auto rep = simulate_replication(c, reference_kde(), 0);
    SamplerConfig cfg;
    cfg.n_chains = 2;
    cfg.n_burnin = 5;
    cfg.n_keep = 6;
    cfg.thin = 2;
    cfg.seed = 4;
    cfg.store_alpha_draws = true;
    std::vector<QPriorSignal> sig;
    for (const auto& t : rep.tau) sig.push_back(QPriorSignal::broadcast(t, 2));
    const auto res = run_mcmc(rep.data, sig, 2, PriorConfig::from_preset("sim-default"), cfg);
    const fs::path dir = scratch_dir("draws");
    io::write_draws(dir, res.draws, kMeta, 6, 2);
    const Draws back = io::read_draws(dir);
    ASSERT_EQ(back.n_chains(), 2u);
    for (std::size_t ch = 0; ch < 2; ++ch) {
        const auto& a = res.draws.chains[ch];
        const auto& b = back.chains[ch];
        EXPECT_EQ(a.n_draws, b.n_draws);
        EXPECT_EQ(a.q, b.q);
        EXPECT_EQ(a.g, b.g);
        EXPECT_EQ(a.s, b.s);
        EXPECT_EQ(a.beta0, b.beta0);
        EXPECT_EQ(a.beta_z, b.beta_z);
        EXPECT_EQ(a.gamma01, b.gamma01);
        EXPECT_EQ(a.gamma10, b.gamma10);
        EXPECT_EQ(a.theta, b.theta);
        EXPECT_EQ(a.lambda, b.lambda);
        EXPECT_EQ(a.alpha_count, b.alpha_count);
        EXPECT_EQ(a.alpha, b.alpha);
        EXPECT_EQ(a.relabel, b.relabel);
    }
    const auto q = io::parse_csv(io::read_file(dir / "q.csv"), "q.csv");
    EXPECT_EQ(q.header[2], "q.1.1.1");
    EXPECT_EQ(q.rows[1][1], "8");
    const auto g10 = io::parse_csv(io::read_file(dir / "gamma10.csv"), "gamma10.csv");
    EXPECT_EQ(g10.header[2], "gamma10.1.0");
    fs::remove_all(dir);
}

TEST(Truth, RoundTripAndMissingFiles) {
    const auto c = make_condition(20, 10, 1, 5, true);
    const auto rep = simulate_replication(c, reference_kde(), 0);
    const fs::path dir = scratch_dir("truth");
    EXPECT_NE(error_of([&] { io::read_truth(dir, rep.data.student_ids()); }).find("truth manifest not found"),
              std::string::npos);
    io::atomic_write(dir / "truth.json", io::truth_json(c, kMeta, 0).dump());
    EXPECT_NE(error_of([&] { io::read_truth(dir, rep.data.student_ids()); }).find("truth_alpha.csv"), std::string::npos);
    io::atomic_write(dir / "truth_alpha.csv", io::alpha_csv(rep.alpha, rep.data, kMeta));
    const Truth tr = io::read_truth(dir, rep.data.student_ids());
    EXPECT_EQ(tr.q, c.q);
    EXPECT_EQ(tr.items[1].g, c.items[1].g);
    EXPECT_EQ(tr.coeffs.gamma01, c.coeffs.gamma01);
    EXPECT_EQ(tr.coeffs.beta_z, c.coeffs.beta_z);
    EXPECT_EQ(tr.alpha, rep.alpha);
    fs::remove_all(dir);
}

TEST(AtomicWrite, ReplacesContent) {
    const fs::path dir = scratch_dir("atomic");
    io::atomic_write(dir / "f.txt", "one");
    io::atomic_write(dir / "f.txt", "two");
    EXPECT_EQ(io::read_file(dir / "f.txt"), "two");
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
    EXPECT_EQ(n, 1u);
    EXPECT_THROW(io::read_file(dir / "missing.txt"), DataError);
    fs::remove_all(dir);
}
