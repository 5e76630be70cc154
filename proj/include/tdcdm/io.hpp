#pragma once

// File formats: responses/covariates CSV, embeddings and tau JSON, draws,
// truth manifests, metrics and diagnostics. Every writer stamps the config
// hash and seed; CSV files carry them on a leading '#' line, JSON files in a
// "meta" object.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <vector>

#include "json.hpp"
#include "tdcdm/draws.hpp"
#include "tdcdm/error.hpp"
#include "tdcdm/metrics.hpp"
#include "tdcdm/model.hpp"
#include "tdcdm/priors.hpp"
#include "tdcdm/sampler.hpp"
#include "tdcdm/simulator.hpp"
#include "tdcdm/text_signal.hpp"

namespace tdcdm::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Scalars, hashing, files

// 17 significant digits, enough to reproduce any double exactly.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* first = s.data();
    if (!s.empty() && s.front() == '+') ++first;
    const auto res = std::from_chars(first, s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
        throw ParseError(where + ": expected a number, got '" + std::string(s) + "'");
    }
    return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
        throw ParseError(where + ": expected an integer, got '" + std::string(s) + "'");
    }
    return v;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return out;
}

// Hash of the canonical (key-sorted) JSON dump.
inline std::string config_hash(const json& cfg) { return hex64(fnv1a64(cfg.dump())); }

struct Meta {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string command;
};

inline std::string meta_comment(const Meta& m) {
    return "# config_hash=" + m.config_hash + ",seed=" + std::to_string(m.seed) + ",command=" + m.command + "\n";
}

inline json meta_json(const Meta& m) { return {{"config_hash", m.config_hash}, {"seed", m.seed}, {"command", m.command}}; }

inline Meta meta_from_json(const json& j, const std::string& source) {
    if (!j.is_object() || !j.contains("config_hash") || !j.contains("seed")) {
        throw ParseError(source + ": meta: missing config_hash or seed");
    }
    Meta m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.command = j.value("command", "");
    return m;
}

inline std::optional<Meta> meta_from_comment(std::string_view line) {
    if (!line.starts_with("#")) return std::nullopt;
    Meta m;
    bool have_hash = false, have_seed = false;
    std::string body(line.substr(1));
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) continue;
        std::string k = item.substr(0, eq), v = item.substr(eq + 1);
        while (!k.empty() && k.front() == ' ') k.erase(k.begin());
        if (k == "config_hash") {
            m.config_hash = v;
            have_hash = true;
        } else if (k == "seed") {
            m.seed = std::stoull(v);
            have_seed = true;
        } else if (k == "command") {
            m.command = v;
        }
    }
    if (!have_hash || !have_seed) return std::nullopt;
    return m;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes to a sibling temporary file and renames it over the target.
inline void atomic_write(const fs::path& p, std::string_view content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, p, ec);
    if (ec) {
        fs::remove(tmp);
        throw DataError("cannot rename " + tmp.string() + " to " + p.string() + ": " + ec.message());
    }
}

inline json parse_json(std::string_view text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(source + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::string source;
    std::optional<Meta> meta;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;  // 1-based source line of each row

    std::string where(std::size_t row, std::string_view field) const {
        return source + ":" + std::to_string(lines[row]) + ": field '" + std::string(field) + "'";
    }

    std::size_t column(std::string_view name) const {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] == name) return c;
        }
        throw ParseError(source + ": missing column '" + std::string(name) + "'");
    }
};

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return std::string(s.substr(a, b - a));
}

inline std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

// Comma-separated, no quoting. Lines starting with '#' are comments; the
// first one may carry metadata.
inline CsvTable parse_csv(std::string_view text, const std::string& source) {
    CsvTable t;
    t.source = source;
    std::size_t line_no = 0, pos = 0;
    bool have_header = false;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            if (!t.meta) t.meta = meta_from_comment(line);
            continue;
        }
        if (line.find('"') != std::string::npos) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": quoted fields are not supported");
        }
        auto fields = split_fields(line);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                             " fields, got " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
        t.lines.push_back(line_no);
    }
    if (!have_header) throw ParseError(source + ": empty file, no header");
    return t;
}

// ---------------------------------------------------------------------------
// Responses and covariates

inline Dataset read_dataset(std::string_view responses_csv, std::optional<std::string_view> covariates_csv,
                            const std::string& responses_source = "responses.csv",
                            const std::string& covariates_source = "covariates.csv") {
    const CsvTable r = parse_csv(responses_csv, responses_source);
    const std::size_t c_student = r.column("student_id"), c_time = r.column("time"), c_item = r.column("item_id"),
                      c_y = r.column("y");
    std::vector<std::string> students;
    std::map<std::string, std::size_t> student_index;
    std::vector<std::vector<std::string>> items;  // per time
    std::vector<std::map<std::string, std::size_t>> item_index;
    struct Cell {
        std::size_t i, t, j;
        int y;
        std::size_t row;
    };
    std::vector<Cell> cells;
    for (std::size_t row = 0; row < r.rows.size(); ++row) {
        const auto& f = r.rows[row];
        const long long t = parse_int(f[c_time], r.where(row, "time"));
        if (t < 1) throw ParseError(r.where(row, "time") + ": time must be >= 1");
        const long long y = parse_int(f[c_y], r.where(row, "y"));
        if (y != 0 && y != 1) throw ParseError(r.where(row, "y") + ": response must be 0 or 1");
        if (f[c_student].empty()) throw ParseError(r.where(row, "student_id") + ": empty");
        if (f[c_item].empty()) throw ParseError(r.where(row, "item_id") + ": empty");
        auto [sit, s_new] = student_index.try_emplace(f[c_student], students.size());
        if (s_new) students.push_back(f[c_student]);
        const auto tt = static_cast<std::size_t>(t - 1);
        if (items.size() <= tt) {
            items.resize(tt + 1);
            item_index.resize(tt + 1);
        }
        auto [iit, i_new] = item_index[tt].try_emplace(f[c_item], items[tt].size());
        if (i_new) items[tt].push_back(f[c_item]);
        cells.push_back({sit->second, tt, iit->second, static_cast<int>(y), row});
    }
    if (cells.empty()) throw DataError(responses_source + ": no responses");
    const std::size_t T = items.size(), N = students.size(), J = items.front().size();
    for (std::size_t t = 0; t < T; ++t) {
        if (items[t].empty()) throw DataError(responses_source + ": no responses at time " + std::to_string(t + 1));
        if (items[t].size() != J) {
            throw DataError(responses_source + ": time " + std::to_string(t + 1) + " has " +
                            std::to_string(items[t].size()) + " items, time 1 has " + std::to_string(J));
        }
    }

    std::vector<std::vector<double>> z;
    std::size_t C = 0;
    if (covariates_csv) {
        const CsvTable cv = parse_csv(*covariates_csv, covariates_source);
        const std::size_t cs = cv.column("student_id");
        for (std::size_t c = 0; c < cv.header.size(); ++c) {
            if (c != cs) ++C;
        }
        z.assign(N, {});
        std::vector<bool> seen(N, false);
        for (std::size_t row = 0; row < cv.rows.size(); ++row) {
            const auto& f = cv.rows[row];
            const auto it = student_index.find(f[cs]);
            if (it == student_index.end()) {
                throw DataError(cv.where(row, "student_id") + ": student '" + f[cs] + "' has no responses");
            }
            if (seen[it->second]) throw DataError(cv.where(row, "student_id") + ": duplicate student '" + f[cs] + "'");
            seen[it->second] = true;
            for (std::size_t c = 0; c < cv.header.size(); ++c) {
                if (c == cs) continue;
                const double v = parse_double(f[c], cv.where(row, cv.header[c]));
                if (!std::isfinite(v)) throw ParseError(cv.where(row, cv.header[c]) + ": covariate must be finite");
                z[it->second].push_back(v);
            }
        }
        for (std::size_t i = 0; i < N; ++i) {
            if (!seen[i]) throw DataError(covariates_source + ": no covariates for student '" + students[i] + "'");
        }
    }

    Dataset d(N, J, T, C);
    std::vector<std::uint8_t> filled(N * J * T, 0);
    for (const Cell& c : cells) {
        std::uint8_t& f = filled[(c.t * N + c.i) * J + c.j];
        if (f) {
            throw DataError(r.where(c.row, "item_id") + ": duplicate response for student '" + students[c.i] +
                            "', time " + std::to_string(c.t + 1) + ", item '" + items[c.t][c.j] + "'");
        }
        f = 1;
        d.set_y(c.i, c.j, c.t, c.y);
    }
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < J; ++j) {
                if (!filled[(t * N + i) * J + j]) {
                    throw DataError(responses_source + ": missing response for student '" + students[i] + "', time " +
                                    std::to_string(t + 1) + ", item '" + items[t][j] + "'");
                }
            }
        }
    }
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t c = 0; c < C; ++c) d.set_z(i, c, z[i][c]);
    }
    d.student_ids() = students;
    d.item_ids() = items;
    if (C > 0) d.standardize_covariates();
    return d;
}

inline std::string write_responses_csv(const Dataset& d, const Meta& m) {
    std::string out = meta_comment(m) + "student_id,time,item_id,y\n";
    for (std::size_t t = 0; t < d.times(); ++t) {
        for (std::size_t i = 0; i < d.learners(); ++i) {
            for (std::size_t j = 0; j < d.items(); ++j) {
                out += d.student_ids()[i] + "," + std::to_string(t + 1) + "," + d.item_ids()[t][j] + "," +
                       std::to_string(d.y(i, j, t)) + "\n";
            }
        }
    }
    return out;
}

inline std::string write_covariates_csv(const Dataset& d, const Meta& m) {
    std::string out = meta_comment(m) + "student_id";
    for (std::size_t c = 0; c < d.covariates(); ++c) out += ",z" + std::to_string(c + 1);
    out += "\n";
    for (std::size_t i = 0; i < d.learners(); ++i) {
        out += d.student_ids()[i];
        for (std::size_t c = 0; c < d.covariates(); ++c) out += "," + format_double(d.z(i, c));
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embeddings and tau

struct EmbeddingsFile {
    std::vector<ItemEmbeddings> items;
    json encoder = json::object();
    std::vector<std::string> attribute_names;
    std::vector<std::vector<double>> attribute_vectors;
};

inline std::vector<double> json_vector(const json& j, const std::string& where) {
    if (!j.is_array()) throw ParseError(where + ": expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ParseError(where + "[" + std::to_string(i) + "]: expected a number");
        out.push_back(j[i].get<double>());
        if (!std::isfinite(out.back())) throw ParseError(where + "[" + std::to_string(i) + "]: non-finite value");
    }
    return out;
}

inline const json& require_field(const json& obj, const char* name, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    const auto it = obj.find(name);
    if (it == obj.end()) throw ParseError(where + "." + name + ": missing field");
    return *it;
}

inline std::string id_string(const json& j, const std::string& where) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return std::to_string(j.get<long long>());
    throw ParseError(where + ": expected a string or integer id");
}

inline std::size_t time_value(const json& j, const std::string& where) {
    if (!j.is_number_integer() || j.get<long long>() < 1) throw ParseError(where + ": expected an integer >= 1");
    return static_cast<std::size_t>(j.get<long long>());
}

inline EmbeddingsFile parse_embeddings(std::string_view text, const std::string& source = "embeddings.json") {
    const json root = parse_json(text, source);
    EmbeddingsFile out;
    const json& items = require_field(root, "items", source);
    if (!items.is_array() || items.empty()) throw ParseError(source + ".items: expected a non-empty array");
    for (std::size_t n = 0; n < items.size(); ++n) {
        const std::string w = source + ".items[" + std::to_string(n) + "]";
        const json& it = items[n];
        ItemEmbeddings e;
        e.item_id = id_string(require_field(it, "item_id", w), w + ".item_id");
        e.time_index = time_value(require_field(it, "time", w), w + ".time");
        e.stem = json_vector(require_field(it, "stem", w), w + ".stem");
        e.correct = json_vector(require_field(it, "correct", w), w + ".correct");
        const json& ds = require_field(it, "distractors", w);
        if (!ds.is_array() || ds.empty()) throw ParseError(w + ".distractors: expected a non-empty array of vectors");
        for (std::size_t m = 0; m < ds.size(); ++m) {
            e.distractors.push_back(json_vector(ds[m], w + ".distractors[" + std::to_string(m) + "]"));
        }
        try {
            e.validate();
        } catch (const Error& err) {
            throw ParseError(w + ": " + err.what());
        }
        out.items.push_back(std::move(e));
    }
    if (root.contains("encoder")) {
        out.encoder = root.at("encoder");
        if (!out.encoder.is_object()) throw ParseError(source + ".encoder: expected an object");
        if (out.encoder.contains("dim")) {
            const json& dim = out.encoder.at("dim");
            if (!dim.is_number_integer()) throw ParseError(source + ".encoder.dim: expected an integer");
            const auto d = dim.get<std::size_t>();
            for (std::size_t n = 0; n < out.items.size(); ++n) {
                if (out.items[n].stem.size() != d) {
                    throw ParseError(source + ".items[" + std::to_string(n) + "].stem: dimension " +
                                     std::to_string(out.items[n].stem.size()) + " differs from encoder.dim " +
                                     std::to_string(d));
                }
            }
        }
    }
    if (root.contains("attributes")) {
        const json& attrs = root.at("attributes");
        if (!attrs.is_array()) throw ParseError(source + ".attributes: expected an array");
        for (std::size_t k = 0; k < attrs.size(); ++k) {
            const std::string w = source + ".attributes[" + std::to_string(k) + "]";
            out.attribute_names.push_back(attrs[k].is_object() && attrs[k].contains("name")
                                              ? attrs[k].at("name").get<std::string>()
                                              : "attribute" + std::to_string(k + 1));
            auto v = json_vector(require_field(attrs[k], "embedding", w), w + ".embedding");
            if (v.size() != out.items.front().stem.size()) throw ParseError(w + ".embedding: dimension differs from items");
            out.attribute_vectors.push_back(std::move(v));
        }
    }
    return out;
}

struct TauOptions {
    TauPool pool = TauPool::PerTime;
    // Weights of tau* = a U + b tau, used only when the file lists attributes.
    double a = 1.0;
    double b = 1.0;
};

// tau per item, and tau*_jk when attribute descriptions are present.
inline json make_tau_json(const EmbeddingsFile& emb, const TauOptions& opt, const Meta& m) {
    std::vector<TextSignal> sig;
    for (const auto& it : emb.items) sig.push_back(compute_tau(it));
    standardize_signals(sig, opt.pool);
    json items = json::array();
    for (std::size_t n = 0; n < sig.size(); ++n) {
        json row = {{"item_id", sig[n].item_id},      {"time", sig[n].time_index}, {"s_plus", sig[n].s_plus},
                    {"s_minus", sig[n].s_minus},    {"tau_raw", sig[n].tau_raw}, {"tau_std", sig[n].tau_std}};
        if (!emb.attribute_vectors.empty()) {
            json u = json::array(), star = json::array();
            for (const auto& desc : emb.attribute_vectors) {
                const double ujk = attribute_similarity(emb.items[n].stem, desc);
                u.push_back(ujk);
                star.push_back(opt.a * ujk + opt.b * sig[n].tau_std);
            }
            row["u"] = u;
            row["tau_star"] = star;
        }
        items.push_back(row);
    }
    json out = {{"meta", meta_json(m)},
                {"items", items},
                {"encoder", emb.encoder},
                {"standardization", opt.pool == TauPool::PerTime ? "per-time" : "union"}};
    if (!emb.attribute_vectors.empty()) out["combination"] = {{"a", opt.a}, {"b", opt.b}, {"attributes", emb.attribute_names}};
    return out;
}

struct TauEntry {
    std::string item_id;
    std::size_t time = 1;
    double tau_raw = 0.0;
    double tau_std = 0.0;
    std::vector<double> tau_star;
};

inline std::vector<TauEntry> parse_tau(std::string_view text, const std::string& source = "tau.json") {
    const json root = parse_json(text, source);
    const json& items = require_field(root, "items", source);
    if (!items.is_array()) throw ParseError(source + ".items: expected an array");
    std::vector<TauEntry> out;
    for (std::size_t n = 0; n < items.size(); ++n) {
        const std::string w = source + ".items[" + std::to_string(n) + "]";
        TauEntry e;
        e.item_id = id_string(require_field(items[n], "item_id", w), w + ".item_id");
        e.time = time_value(require_field(items[n], "time", w), w + ".time");
        const json& raw = require_field(items[n], "tau_raw", w);
        const json& std_ = require_field(items[n], "tau_std", w);
        if (!raw.is_number()) throw ParseError(w + ".tau_raw: expected a number");
        if (!std_.is_number()) throw ParseError(w + ".tau_std: expected a number");
        e.tau_raw = raw.get<double>();
        e.tau_std = std_.get<double>();
        if (items[n].contains("tau_star")) e.tau_star = json_vector(items[n].at("tau_star"), w + ".tau_star");
        out.push_back(std::move(e));
    }
    return out;
}

// Matches tau entries to the dataset's items by (item_id, time). Uses
// tau_star when every entry carries K values, otherwise broadcasts tau_std.
inline std::vector<QPriorSignal> signal_for_dataset(const std::vector<TauEntry>& tau, const Dataset& d,
                                                    std::size_t n_attributes) {
    std::map<std::pair<std::size_t, std::string>, const TauEntry*> by_key;
    for (const auto& e : tau) by_key[{e.time, e.item_id}] = &e;
    const bool use_star = !tau.empty() && std::all_of(tau.begin(), tau.end(), [&](const TauEntry& e) {
        return e.tau_star.size() == n_attributes;
    });
    std::vector<QPriorSignal> out;
    for (std::size_t t = 0; t < d.times(); ++t) {
        std::vector<double> values;
        for (std::size_t j = 0; j < d.items(); ++j) {
            const auto it = by_key.find({t + 1, d.item_ids()[t][j]});
            if (it == by_key.end()) {
                throw DataError("tau file has no entry for item '" + d.item_ids()[t][j] + "' at time " +
                                std::to_string(t + 1));
            }
            if (use_star) {
                values.insert(values.end(), it->second->tau_star.begin(), it->second->tau_star.end());
            } else {
                values.insert(values.end(), n_attributes, it->second->tau_std);
            }
        }
        out.push_back(QPriorSignal::from_matrix(std::move(values), d.items(), n_attributes));
    }
    return out;
}

inline json tau_json_from_values(const std::vector<std::vector<double>>& tau, const Dataset& d, const Meta& m) {
    json items = json::array();
    for (std::size_t t = 0; t < tau.size(); ++t) {
        for (std::size_t j = 0; j < tau[t].size(); ++j) {
            items.push_back({{"item_id", d.item_ids()[t][j]}, {"time", t + 1}, {"tau_raw", tau[t][j]}, {"tau_std", tau[t][j]}});
        }
    }
    return {{"meta", meta_json(m)}, {"items", items}, {"encoder", {{"name", "simulated-kde"}}}};
}

// ---------------------------------------------------------------------------
// Configuration records

inline json to_json(const PriorConfig& p) {
    return {{"preset", p.preset},
            {"theta_hyper", {p.theta_hyper.a, p.theta_hyper.b}},
            {"sigma_lambda", p.sigma_lambda},
            {"gs_prior", {p.gs_prior.a, p.gs_prior.b}},
            {"gs_init", {p.gs_init_lo, p.gs_init_hi}},
            {"coeff_sd", p.coeff_sd},
            {"gamma10_prior", p.gamma10_prior == Gamma10Prior::Shifted ? "shifted" : "standard"},
            {"gamma10_intercept_mean", p.gamma10_intercept_mean},
            {"lambda_enabled", p.lambda_enabled},
            {"pinned_lambda", p.pinned_lambda},
            {"text_prior", p.text_prior}};
}

inline json to_json(const SamplerConfig& s) {
    return {{"chains", s.n_chains},
            {"burnin", s.n_burnin},
            {"keep", s.n_keep},
            {"thin", s.thin},
            {"rw_step_coeffs", s.rw_step_coeffs},
            {"rw_step_hyper", s.rw_step_hyper},
            {"adapt_window", s.adapt_window},
            {"target_accept", s.target_accept},
            {"seed", s.seed},
            {"constraint", s.constraint == ConstraintPolicy::Strict ? "strict" : "pure-item"},
            {"label_swap", s.label_swap},
            {"align_chains", s.align_chains}};
}

// ---------------------------------------------------------------------------
// Draws

inline std::string q_col(std::size_t t, std::size_t j, std::size_t k) {
    return "q." + std::to_string(t + 1) + "." + std::to_string(j + 1) + "." + std::to_string(k + 1);
}

struct DrawFileSpec {
    std::string file;
    std::vector<std::string> columns;
};

inline std::vector<std::string> indexed_names(const std::string& base, std::size_t a, std::size_t b, std::size_t b0 = 1) {
    std::vector<std::string> out;
    for (std::size_t x = 0; x < a; ++x) {
        for (std::size_t y = 0; y < b; ++y) out.push_back(base + "." + std::to_string(x + 1) + "." + std::to_string(y + b0));
    }
    return out;
}

inline json dims_json(const Draws& d, std::size_t first_iter, std::size_t thin) {
    return {{"n_learners", d.dims.n_learners}, {"n_items", d.dims.n_items},       {"n_attributes", d.dims.n_attributes},
            {"n_times", d.dims.n_times},       {"n_covariates", d.dims.n_covariates}, {"n_chains", d.n_chains()},
            {"draws_per_chain", d.draws_per_chain()}, {"first_iter", first_iter}, {"thin", thin},
            {"alpha_draws", d.has_alpha_draws()}};
}

// Per-parameter CSVs indexed by (chain, iter). `first_iter` is the sweep
// number of the first kept draw.
inline void write_draws(const fs::path& dir, const Draws& d, const Meta& m, std::size_t first_iter, std::size_t thin) {
    const DrawDims& dm = d.dims;
    const std::size_t K = dm.n_attributes, C = dm.n_covariates, W = C + 1, T = dm.n_times, J = dm.n_items;
    auto emit = [&](const std::string& file, const std::vector<std::string>& cols,
                    const std::function<void(const ChainDraws&, std::size_t, std::string&)>& row) {
        std::string out = meta_comment(m) + "chain,iter";
        for (const auto& c : cols) out += "," + c;
        out += "\n";
        for (std::size_t c = 0; c < d.n_chains(); ++c) {
            for (std::size_t r = 0; r < d.chains[c].n_draws; ++r) {
                out += std::to_string(c + 1) + "," + std::to_string(first_iter + r * thin);
                row(d.chains[c], r, out);
                out += "\n";
            }
        }
        atomic_write(dir / file, out);
    };
    std::vector<std::string> qcols;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t k = 0; k < K; ++k) qcols.push_back(q_col(t, j, k));
        }
    }
    emit("q.csv", qcols, [&](const ChainDraws& ch, std::size_t r, std::string& out) {
        for (std::size_t x = 0; x < T * J; ++x) {
            const Pattern p = ch.q[r * T * J + x];
            for (std::size_t k = 0; k < K; ++k) out += has_attribute(p, k, K) ? ",1" : ",0";
        }
    });
    auto per_chain = [&](const std::string& file, const std::vector<std::string>& cols,
                         std::vector<double> ChainDraws::*member) {
        emit(file, cols, [&, member](const ChainDraws& ch, std::size_t r, std::string& out) {
            const auto& v = ch.*member;
            const std::size_t w = cols.size();
            for (std::size_t x = 0; x < w; ++x) out += "," + format_double(v[r * w + x]);
        });
    };
    per_chain("g.csv", indexed_names("g", T, J), &ChainDraws::g);
    per_chain("s.csv", indexed_names("s", T, J), &ChainDraws::s);
    per_chain("beta0.csv", indexed_names("beta0", 1, K), &ChainDraws::beta0);
    if (C > 0) per_chain("betaZ.csv", indexed_names("betaZ", K, C), &ChainDraws::beta_z);
    per_chain("gamma01.csv", indexed_names("gamma01", K, W, 0), &ChainDraws::gamma01);
    per_chain("gamma10.csv", indexed_names("gamma10", K, W, 0), &ChainDraws::gamma10);
    per_chain("theta.csv", {"theta"}, &ChainDraws::theta);
    per_chain("lambda.csv", {"lambda"}, &ChainDraws::lambda);

    std::string ac = meta_comment(m) + "chain,time,learner,attribute,count,n_draws\n";
    for (std::size_t c = 0; c < d.n_chains(); ++c) {
        const auto& ch = d.chains[c];
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < dm.n_learners; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    ac += std::to_string(c + 1) + "," + std::to_string(t + 1) + "," + std::to_string(i + 1) + "," +
                          std::to_string(k + 1) + "," + std::to_string(ch.alpha_count[(t * dm.n_learners + i) * K + k]) +
                          "," + std::to_string(ch.n_draws) + "\n";
                }
            }
        }
    }
    atomic_write(dir / "alpha_count.csv", ac);
    if (d.has_alpha_draws()) {
        emit("alpha.csv", indexed_names("alpha", T, dm.n_learners), [&](const ChainDraws& ch, std::size_t r, std::string& out) {
            for (std::size_t x = 0; x < T * dm.n_learners; ++x) out += "," + std::to_string(ch.alpha[r * T * dm.n_learners + x]);
        });
    }
    json dims = dims_json(d, first_iter, thin);
    dims["meta"] = meta_json(m);
    std::vector<std::vector<std::size_t>> relabel;
    for (const auto& ch : d.chains) relabel.push_back(ch.relabel);
    dims["relabel"] = relabel;
    atomic_write(dir / "draws.json", dims.dump(2) + "\n");
}

inline Draws read_draws(const fs::path& dir) {
    const json dims = parse_json(read_file(dir / "draws.json"), (dir / "draws.json").string());
    Draws d;
    try {
        d.dims.n_learners = dims.at("n_learners");
        d.dims.n_items = dims.at("n_items");
        d.dims.n_attributes = dims.at("n_attributes");
        d.dims.n_times = dims.at("n_times");
        d.dims.n_covariates = dims.at("n_covariates");
    } catch (const json::exception& e) {
        throw ParseError((dir / "draws.json").string() + ": " + e.what());
    }
    const std::size_t n_chains = dims.at("n_chains"), per_chain = dims.at("draws_per_chain");
    const DrawDims& dm = d.dims;
    const std::size_t K = dm.n_attributes, C = dm.n_covariates, W = C + 1, T = dm.n_times, J = dm.n_items;
    d.chains.resize(n_chains);
    const auto relabel = dims.value("relabel", std::vector<std::vector<std::size_t>>{});
    for (std::size_t c = 0; c < n_chains; ++c) {
        d.chains[c].n_draws = per_chain;
        d.chains[c].relabel = c < relabel.size() ? relabel[c] : std::vector<std::size_t>{};
    }

    auto load = [&](const std::string& file, std::size_t width, const std::function<void(ChainDraws&, const std::vector<std::string>&, const CsvTable&, std::size_t)>& sink) {
        const fs::path p = dir / file;
        const CsvTable t = parse_csv(read_file(p), p.string());
        if (t.header.size() != width + 2) throw ParseError(p.string() + ": expected " + std::to_string(width + 2) + " columns");
        if (t.rows.size() != n_chains * per_chain) throw ParseError(p.string() + ": wrong number of draws");
        for (std::size_t row = 0; row < t.rows.size(); ++row) {
            const long long chain = parse_int(t.rows[row][0], t.where(row, "chain"));
            if (chain < 1 || static_cast<std::size_t>(chain) > n_chains) throw ParseError(t.where(row, "chain") + ": out of range");
            sink(d.chains[static_cast<std::size_t>(chain - 1)], t.rows[row], t, row);
        }
    };
    load("q.csv", T * J * K, [&](ChainDraws& ch, const std::vector<std::string>& f, const CsvTable& t, std::size_t row) {
        for (std::size_t x = 0; x < T * J; ++x) {
            Pattern p = 0;
            for (std::size_t k = 0; k < K; ++k) {
                const std::string& v = f[2 + x * K + k];
                if (v != "0" && v != "1") throw ParseError(t.where(row, t.header[2 + x * K + k]) + ": expected 0 or 1");
                if (v == "1") p |= attribute_bit(k, K);
            }
            ch.q.push_back(p);
        }
    });
    auto load_doubles = [&](const std::string& file, std::size_t width, std::vector<double> ChainDraws::*member) {
        load(file, width, [&, member](ChainDraws& ch, const std::vector<std::string>& f, const CsvTable& t, std::size_t row) {
            for (std::size_t x = 0; x < width; ++x) (ch.*member).push_back(parse_double(f[2 + x], t.where(row, t.header[2 + x])));
        });
    };
    load_doubles("g.csv", T * J, &ChainDraws::g);
    load_doubles("s.csv", T * J, &ChainDraws::s);
    load_doubles("beta0.csv", K, &ChainDraws::beta0);
    if (C > 0) load_doubles("betaZ.csv", K * C, &ChainDraws::beta_z);
    load_doubles("gamma01.csv", K * W, &ChainDraws::gamma01);
    load_doubles("gamma10.csv", K * W, &ChainDraws::gamma10);
    load_doubles("theta.csv", 1, &ChainDraws::theta);
    load_doubles("lambda.csv", 1, &ChainDraws::lambda);

    const fs::path ap = dir / "alpha_count.csv";
    const CsvTable at = parse_csv(read_file(ap), ap.string());
    for (auto& ch : d.chains) ch.alpha_count.assign(T * dm.n_learners * K, 0);
    for (std::size_t row = 0; row < at.rows.size(); ++row) {
        const auto& f = at.rows[row];
        const auto c = static_cast<std::size_t>(parse_int(f[at.column("chain")], at.where(row, "chain")) - 1);
        const auto t = static_cast<std::size_t>(parse_int(f[at.column("time")], at.where(row, "time")) - 1);
        const auto i = static_cast<std::size_t>(parse_int(f[at.column("learner")], at.where(row, "learner")) - 1);
        const auto k = static_cast<std::size_t>(parse_int(f[at.column("attribute")], at.where(row, "attribute")) - 1);
        if (c >= n_chains || t >= T || i >= dm.n_learners || k >= K) throw ParseError(at.where(row, "chain") + ": index out of range");
        d.chains[c].alpha_count[(t * dm.n_learners + i) * K + k] =
            static_cast<std::uint32_t>(parse_int(f[at.column("count")], at.where(row, "count")));
    }
    if (dims.value("alpha_draws", false)) {
        load("alpha.csv", T * dm.n_learners, [&](ChainDraws& ch, const std::vector<std::string>& f, const CsvTable& t, std::size_t row) {
            for (std::size_t x = 0; x < T * dm.n_learners; ++x) {
                ch.alpha.push_back(static_cast<Pattern>(parse_int(f[2 + x], t.where(row, t.header[2 + x]))));
            }
        });
    }
    return d;
}

// ---------------------------------------------------------------------------
// Fit summaries and diagnostics

inline json q_json(const QMatrix& q) {
    json rows = json::array();
    for (std::size_t j = 0; j < q.items(); ++j) rows.push_back(q.row_bits(j));
    return rows;
}

inline std::vector<QMatrix> q_list_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw ParseError(where + ": expected an array of matrices");
    std::vector<QMatrix> out;
    for (std::size_t t = 0; t < j.size(); ++t) {
        try {
            out.push_back(QMatrix::from_rows(j[t].get<std::vector<std::vector<int>>>(), t + 1));
        } catch (const std::exception& e) {
            throw ParseError(where + "[" + std::to_string(t) + "]: " + e.what());
        }
    }
    return out;
}

inline json diagnostics_json(const Diagnostics& d, const Meta& m, double rhat_threshold = 1.1) {
    json scalars = json::array();
    for (const auto& s : d.scalars) {
        json e = {{"name", s.name}};
        e["rhat"] = s.rhat ? json(*s.rhat) : json(nullptr);
        e["ess_bulk"] = s.ess ? json(*s.ess) : json(nullptr);
        if (!s.note.empty()) e["note"] = s.note;
        scalars.push_back(e);
    }
    json acc = json::object();
    for (const auto& [name, rate] : d.acceptance) acc[name] = rate;
    json out = {{"meta", meta_json(m)}, {"scalars", scalars}, {"acceptance", acc}, {"rhat_threshold", rhat_threshold}};
    out["max_rhat"] = d.max_rhat ? json(*d.max_rhat) : json(nullptr);
    out["min_ess_bulk"] = d.min_ess ? json(*d.min_ess) : json(nullptr);
    out["converged"] = d.max_rhat ? json(*d.max_rhat <= rhat_threshold) : json(nullptr);
    return out;
}

inline json summary_json(const Draws& d, const Meta& m) {
    const auto mq = map_q(d);
    const auto pip = pip_matrix(d);
    const PosteriorMeans pm = posterior_means(d);
    json q = json::array(), p = json::array();
    for (std::size_t t = 0; t < mq.size(); ++t) {
        q.push_back(q_json(mq[t]));
        json rows = json::array();
        const std::size_t K = d.dims.n_attributes;
        for (std::size_t j = 0; j < d.dims.n_items; ++j) {
            rows.push_back(std::vector<double>(pip[t].begin() + static_cast<std::ptrdiff_t>(j * K),
                                               pip[t].begin() + static_cast<std::ptrdiff_t>((j + 1) * K)));
        }
        p.push_back(rows);
    }
    return {{"meta", meta_json(m)},
            {"map_q", q},
            {"pip", p},
            {"posterior_mean", {{"g", pm.g},
                                {"s", pm.s},
                                {"beta0", pm.coeffs.beta0},
                                {"betaZ", pm.coeffs.beta_z},
                                {"gamma01", pm.coeffs.gamma01},
                                {"gamma10", pm.coeffs.gamma10},
                                {"theta", pm.theta},
                                {"lambda", pm.lambda}}}};
}

// ---------------------------------------------------------------------------
// Truth manifests

inline json truth_json(const SimCondition& c, const Meta& m, std::size_t replication) {
    json q = json::array(), g = json::array(), s = json::array();
    for (std::size_t t = 0; t < c.n_times; ++t) {
        q.push_back(q_json(c.q[t]));
        g.push_back(c.items[t].g);
        s.push_back(c.items[t].s);
    }
    return {{"meta", meta_json(m)},
            {"condition", {{"N", c.n_learners}, {"J", c.n_items}, {"T", c.n_times}, {"K", c.n_attributes},
                           {"C", c.n_covariates}, {"label", c.label()}, {"seed", c.seed},
                           {"tau_link", c.tau_link == TauLink::Rank ? "rank" : "independent"}}},
            {"replication", replication},
            {"q", q},
            {"g", g},
            {"s", s},
            {"beta0", c.coeffs.beta0},
            {"betaZ", c.coeffs.beta_z},
            {"gamma01", c.coeffs.gamma01},
            {"gamma10", c.coeffs.gamma10}};
}

inline std::string alpha_csv(const AttributeState& a, const Dataset& d, const Meta& m) {
    std::string out = meta_comment(m) + "student_id,time";
    for (std::size_t k = 0; k < a.attributes(); ++k) out += ",a" + std::to_string(k + 1);
    out += "\n";
    for (std::size_t t = 0; t < a.times(); ++t) {
        for (std::size_t i = 0; i < a.learners(); ++i) {
            out += d.student_ids()[i] + "," + std::to_string(t + 1);
            for (std::size_t k = 0; k < a.attributes(); ++k) out += "," + std::to_string(a.at(i, k, t));
            out += "\n";
        }
    }
    return out;
}

// Truth from truth.json plus truth_alpha.csv; learners are matched by id in
// the order given by `student_ids`.
inline Truth read_truth(const fs::path& dir, const std::vector<std::string>& student_ids) {
    const fs::path tp = dir / "truth.json";
    if (!fs::exists(tp)) {
        throw DataError("truth manifest not found: " + tp.string() + " (run 'tdcdm simulate' or pass --truth <dir>)");
    }
    const std::string src = tp.string();
    const json j = parse_json(read_file(tp), src);
    Truth tr;
    tr.q = q_list_from_json(require_field(j, "q", src), src + ".q");
    const std::size_t T = tr.q.size();
    if (T == 0) throw ParseError(src + ".q: empty");
    const std::size_t K = tr.q.front().attributes();
    const auto g = require_field(j, "g", src).get<std::vector<std::vector<double>>>();
    const auto s = require_field(j, "s", src).get<std::vector<std::vector<double>>>();
    if (g.size() != T || s.size() != T) throw ParseError(src + ": g and s need one vector per time");
    for (std::size_t t = 0; t < T; ++t) tr.items.push_back({g[t], s[t], t + 1});
    const auto beta_z = require_field(j, "betaZ", src).get<std::vector<double>>();
    tr.coeffs = StructuralParams(K, beta_z.size() / K);
    tr.coeffs.beta0 = require_field(j, "beta0", src).get<std::vector<double>>();
    tr.coeffs.beta_z = beta_z;
    tr.coeffs.gamma01 = require_field(j, "gamma01", src).get<std::vector<double>>();
    tr.coeffs.gamma10 = require_field(j, "gamma10", src).get<std::vector<double>>();

    const fs::path ap = dir / "truth_alpha.csv";
    if (!fs::exists(ap)) throw DataError("true attribute file not found: " + ap.string());
    const CsvTable at = parse_csv(read_file(ap), ap.string());
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < student_ids.size(); ++i) idx[student_ids[i]] = i;
    tr.alpha = AttributeState(student_ids.size(), K, T);
    const std::size_t cs = at.column("student_id"), ct = at.column("time");
    for (std::size_t row = 0; row < at.rows.size(); ++row) {
        const auto& f = at.rows[row];
        const auto it = idx.find(f[cs]);
        if (it == idx.end()) throw DataError(at.where(row, "student_id") + ": unknown student '" + f[cs] + "'");
        const auto t = parse_int(f[ct], at.where(row, "time"));
        if (t < 1 || static_cast<std::size_t>(t) > T) throw ParseError(at.where(row, "time") + ": out of range");
        for (std::size_t k = 0; k < K; ++k) {
            const std::string name = "a" + std::to_string(k + 1);
            const auto v = parse_int(f[at.column(name)], at.where(row, name));
            tr.alpha.set(it->second, k, static_cast<std::size_t>(t - 1), v ? 1 : 0);
        }
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Metrics

inline json rate_json(const OptionalRate& r) {
    if (r.value) return *r.value;
    return {{"value", nullptr}, {"reason", r.reason}};
}

inline json metrics_json(const MetricsReport& r, const Meta& m, const json& labels = json::object()) {
    json q = json::array(), pip = json::array();
    for (std::size_t t = 0; t < r.q.size(); ++t) {
        q.push_back({{"time", t + 1}, {"acc", r.q[t].acc}, {"fpr", rate_json(r.q[t].fpr)}, {"fnr", rate_json(r.q[t].fnr)}});
        pip.push_back({{"time", t + 1},
                       {"pip_true_mean", rate_json(r.pip[t].pip_true_mean)},
                       {"pip_false_mean", rate_json(r.pip[t].pip_false_mean)}});
    }
    auto err = [](const ErrorPair& e) { return json{{"rmse", e.rmse}, {"mae", e.mae}}; };
    json flat = json::object();
    for (const auto& [name, v] : flatten(r)) flat[name] = v;
    return {{"meta", meta_json(m)},
            {"labels", labels},
            {"permutation", r.permutation},
            {"q_recovery", q},
            {"pip", pip},
            {"pip_overall", {{"pip_true_mean", rate_json(r.pip_overall.pip_true_mean)},
                             {"pip_false_mean", rate_json(r.pip_overall.pip_false_mean)}}},
            {"par", r.par},
            {"aar", r.aar},
            {"param_error", {{"g", err(r.g)}, {"s", err(r.s)}, {"beta0", err(r.beta0)}, {"betaZ", err(r.beta_z)},
                             {"gamma01", err(r.gamma01)}, {"gamma10", err(r.gamma10)}}},
            {"flat", flat}};
}

}  // namespace tdcdm::io
