#include "dfat/data_ingest.hpp"

#include "dfat/corpus.hpp"
#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

namespace dfat::data {

using json = nlohmann::json;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

std::string_view to_string(ImageMode m) { return m == ImageMode::raw ? "raw" : "patch_features"; }

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val" || s == "validate" || s == "validation") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split `" + std::string(s) + "`");
}

ImageMode parse_image_mode(std::string_view s) {
    if (s == "raw") return ImageMode::raw;
    if (s == "patch_features") return ImageMode::patch_features;
    throw DataError("unknown image mode `" + std::string(s) + "`");
}

int PairedSample::primary_label() const {
    for (Eigen::Index j = 0; j < labels.size(); ++j) {
        if (labels[j] != 0.0) return static_cast<int>(j);
    }
    return -1;
}

void DatasetManifest::validate() const {
    if (categories.empty()) throw DataError("dataset manifest lists no categories");
    std::vector<std::string> sorted = categories;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw DataError("duplicate category in dataset manifest");
    if (image_mode == ImageMode::raw) {
        if (patch_size <= 0 || raw_height <= 0 || raw_width <= 0 || raw_channels <= 0) {
            throw DataError("raw image mode needs positive raw_height, raw_width, raw_channels and patch_size");
        }
        if (raw_height % patch_size != 0 || raw_width % patch_size != 0) {
            throw DataError("raw image dimensions must be multiples of patch_size");
        }
    }
    if (num_patches <= 0 || patch_dim <= 0) throw DataError("dataset manifest needs positive num_patches and patch_dim");
}

void DatasetManifest::save(const fs::path& path) const {
    io::KeyValues kv;
    kv.set("dataset.name", name);
    std::string cats;
    for (std::size_t j = 0; j < categories.size(); ++j) cats += (j ? "|" : "") + categories[j];
    kv.set("dataset.categories", cats);
    kv.set("dataset.image_mode", std::string(to_string(image_mode)));
    for (const auto& [s, n] : counts) kv.set("dataset.count." + std::string(to_string(s)), n);
    kv.set("dataset.source_note", source_note);
    kv.set("dataset.records", records);
    kv.set("dataset.num_patches", num_patches);
    kv.set("dataset.patch_dim", patch_dim);
    if (image_mode == ImageMode::raw) {
        kv.set("dataset.raw_height", raw_height);
        kv.set("dataset.raw_width", raw_width);
        kv.set("dataset.raw_channels", raw_channels);
        kv.set("dataset.patch_size", patch_size);
    }
    kv.save(path);
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    DatasetManifest m;
    try {
        const auto kv = io::KeyValues::load(path);
        m.name = kv.get("dataset.name");
        for (const auto& c : io::split(kv.get("dataset.categories"), '|')) m.categories.push_back(io::trim(c));
        m.image_mode = parse_image_mode(kv.get("dataset.image_mode"));
        for (Split s : {Split::train, Split::val, Split::test}) {
            const std::string key = "dataset.count." + std::string(to_string(s));
            if (kv.contains(key)) m.counts[s] = static_cast<int>(kv.get_int(key));
        }
        m.source_note = kv.get_or("dataset.source_note", "");
        m.records = kv.get_or("dataset.records", "records.jsonl");
        if (m.image_mode == ImageMode::raw) {
            m.raw_height = static_cast<int>(kv.get_int("dataset.raw_height"));
            m.raw_width = static_cast<int>(kv.get_int("dataset.raw_width"));
            m.raw_channels = static_cast<int>(kv.get_int("dataset.raw_channels"));
            m.patch_size = static_cast<int>(kv.get_int("dataset.patch_size"));
            if (m.patch_size > 0) {
                m.num_patches = (m.raw_height / m.patch_size) * (m.raw_width / m.patch_size);
                m.patch_dim = m.patch_size * m.patch_size * m.raw_channels;
            }
        } else {
            m.num_patches = static_cast<int>(kv.get_int("dataset.num_patches"));
            m.patch_dim = static_cast<int>(kv.get_int("dataset.patch_dim"));
        }
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    m.validate();
    return m;
}

std::string findings_and_impression(const std::string& report) {
    // Section headers look like `FINDINGS:` or `CLINICAL HISTORY:`.
    static const std::regex header(R"(\b([A-Z][A-Z ]*[A-Z]):)");
    std::string out;
    std::string current;
    std::size_t body = 0;
    auto flush = [&](std::size_t end) {
        if (current == "FINDINGS" || current == "IMPRESSION") {
            const auto text = io::trim(report.substr(body, end - body));
            if (!text.empty()) out += (out.empty() ? "" : " ") + text;
        }
    };
    for (auto it = std::sregex_iterator(report.begin(), report.end(), header); it != std::sregex_iterator(); ++it) {
        flush(static_cast<std::size_t>(it->position(0)));
        current = (*it)[1].str();
        body = static_cast<std::size_t>(it->position(0) + it->length(0));
    }
    flush(report.size());
    return out.empty() ? report : out;
}

std::vector<PairedSample> Dataset::split(Split s) const {
    std::vector<PairedSample> out;
    for (const auto& p : samples) {
        if (p.split == s) out.push_back(p);
    }
    return out;
}

fs::path resolve_manifest_path(const fs::path& manifest_path) {
    if (manifest_path.is_relative()) {
        if (const char* root = std::getenv("DFAT_DATA_ROOT"); root && *root) return fs::path(root) / manifest_path;
    }
    return manifest_path;
}

namespace {

Matrix patchify(const Matrix& raw, const DatasetManifest& m) {
    const int p = m.patch_size, c = m.raw_channels;
    const int ty_n = m.raw_height / p, tx_n = m.raw_width / p;
    Matrix out(ty_n * tx_n, p * p * c);
    for (int ty = 0; ty < ty_n; ++ty) {
        for (int tx = 0; tx < tx_n; ++tx) {
            int col = 0;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int ch = 0; ch < c; ++ch) out(ty * tx_n + tx, col++) = raw(ty * p + dy, (tx * p + dx) * c + ch);
                }
            }
        }
    }
    return out;
}

PairedSample parse_record(const json& rec, const DatasetManifest& m, const fs::path& root, const std::string& where,
                          const LoadOptions& options) {
    auto fail = [&](const std::string& msg) -> DataError { return DataError(where + ": " + msg); };
    if (!rec.is_object()) throw fail("record is not a JSON object");
    PairedSample s;
    if (!rec.contains("sample_id") || !rec["sample_id"].is_string()) throw fail("missing string field `sample_id`");
    s.sample_id = rec["sample_id"].get<std::string>();
    const std::string who = "record `" + s.sample_id + "`";
    if (!rec.contains("report") || !rec["report"].is_string()) throw fail(who + " lacks a string `report`");
    s.report = rec["report"].get<std::string>();
    if (options.report_filter) s.report = options.report_filter(s.report);
    if (!rec.contains("split") || !rec["split"].is_string()) throw fail(who + " lacks a string `split`");
    try {
        s.split = parse_split(rec["split"].get<std::string>());
    } catch (const DataError& e) {
        throw fail(who + ": " + e.what());
    }
    if (s.split == Split::train && io::trim(s.report).empty()) throw fail(who + " is a training record with an empty report");

    const auto n = static_cast<Eigen::Index>(m.categories.size());
    if (!rec.contains("labels") || !rec["labels"].is_array()) throw fail(who + " lacks a `labels` array");
    const auto& labels = rec["labels"];
    s.labels = Eigen::RowVectorXd::Zero(n);
    const bool by_name = !labels.empty() && labels[0].is_string();
    if (by_name) {
        for (const auto& l : labels) {
            if (!l.is_string()) throw fail(who + " mixes label names and numbers");
            const auto name = l.get<std::string>();
            const auto it = std::find(m.categories.begin(), m.categories.end(), name);
            if (it == m.categories.end()) throw fail(who + " names unknown category `" + name + "`");
            s.labels[it - m.categories.begin()] = 1.0;
        }
    } else {
        if (static_cast<Eigen::Index>(labels.size()) != n) {
            throw fail(who + " has " + std::to_string(labels.size()) + " labels, expected " + std::to_string(n));
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto& l = labels[static_cast<std::size_t>(j)];
            if (!l.is_number()) throw fail(who + " has a non-numeric label");
            const double v = l.get<double>();
            if (v != 0.0 && v != 1.0) throw fail(who + " has a label outside {0, 1}");
            s.labels[j] = v;
        }
    }

    const char* key = m.image_mode == ImageMode::raw ? "image_path" : "features_path";
    if (!rec.contains(key) || !rec[key].is_string()) throw fail(who + " lacks `" + key + "`");
    const fs::path image_path = root / rec[key].get<std::string>();
    Matrix img;
    try {
        img = io::read_array(image_path);
    } catch (const DataError& e) {
        throw fail(who + ": " + e.what());
    }
    if (m.image_mode == ImageMode::raw) {
        if (img.rows() != m.raw_height || img.cols() != static_cast<Eigen::Index>(m.raw_width) * m.raw_channels) {
            throw fail(who + " image has the wrong shape");
        }
        s.image = patchify(img, m);
    } else {
        if (img.rows() != m.num_patches || img.cols() != m.patch_dim) {
            throw fail(who + " features are " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) + ", expected " +
                       std::to_string(m.num_patches) + "x" + std::to_string(m.patch_dim));
        }
        s.image = std::move(img);
    }
    return s;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path, const LoadOptions& options) {
    Dataset ds;
    const fs::path path = resolve_manifest_path(manifest_path);
    ds.manifest = DatasetManifest::load(path);
    ds.root = path.parent_path();
    const fs::path records = ds.root / ds.manifest.records;
    std::ifstream in(records);
    if (!in) throw DataError("cannot open records file " + records.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        const std::string where = records.filename().string() + ":" + std::to_string(line_no);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where + ": corrupt record (" + e.what() + ")");
        }
        ds.samples.push_back(parse_record(rec, ds.manifest, ds.root, where, options));
    }
    for (const auto& [s, n] : ds.manifest.counts) {
        const auto have = std::count_if(ds.samples.begin(), ds.samples.end(), [s = s](const PairedSample& p) { return p.split == s; });
        if (have != n) {
            throw DataError("manifest promises " + std::to_string(n) + " " + std::string(to_string(s)) + " samples, found " +
                            std::to_string(have));
        }
    }
    if (options.shuffle_seed) {
        std::mt19937_64 rng(*options.shuffle_seed);
        std::vector<PairedSample> ordered;
        for (Split s : {Split::train, Split::val, Split::test}) {
            auto part = ds.split(s);
            std::shuffle(part.begin(), part.end(), rng);
            for (auto& p : part) ordered.push_back(std::move(p));
        }
        ds.samples = std::move(ordered);
    }
    return ds;
}

namespace {

const char* const kClassNames[] = {"Edema",    "Pneumothorax", "Cardiomegaly", "Atelectasis", "Nodule",
                                   "Emphysema", "Mass",         "Effusion",     "Pneumonia",   "Consolidation"};

const char* const kMotifWords[] = {"haziness", "kerley",   "cuffing",  "lucency",   "rim",      "collapse",  "enlarged",
                                   "silhouette", "widened", "platelike", "shift",    "crowding", "rounded",   "solitary",
                                   "granuloma", "hyperlucent", "flattened", "bullae", "lobulated", "spiculated", "bulky",
                                   "meniscus", "blunting", "layering", "airspace", "febrile",  "patchy",    "bronchograms",
                                   "confluent", "dense"};

const char* const kFiller[] = {"the",    "lungs",  "are",     "seen",  "there",  "is",     "a",      "with",
                               "and",    "patient", "view",   "chest", "film",   "stable", "heart",  "size",
                               "portable", "upright", "frontal", "lateral", "compared", "prior", "study", "unchanged"};

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string sample_id(int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%05d", k);
    return buf;
}

}  // namespace

std::vector<std::string> synthetic_class_names(int classes) {
    std::vector<std::string> out;
    for (int c = 0; c < classes; ++c) {
        out.push_back(c < static_cast<int>(std::size(kClassNames)) ? kClassNames[c] : "Class " + std::to_string(c));
    }
    return out;
}

std::vector<std::string> synthetic_motif(int c) {
    std::vector<std::string> out;
    for (int k = 0; k < 3; ++k) {
        const int w = 3 * c + k;
        out.push_back(w < static_cast<int>(std::size(kMotifWords)) ? kMotifWords[w]
                                                                   : "motif" + std::to_string(c) + static_cast<char>('a' + k));
    }
    return out;
}

SynthResult make_synthetic(const SynthConfig& cfg, const fs::path& dir) {
    if (cfg.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (cfg.per_class < 1) throw ConfigError("synthetic data needs at least 1 sample per class");
    if (!(cfg.sigma >= 0.0)) throw ConfigError("synthetic noise sigma must be non-negative");
    if (cfg.num_patches < 1 || cfg.patch_dim < 1) throw ConfigError("synthetic patch grid must be nonempty");
    if (!(cfg.motif_rate >= 0.0 && cfg.motif_rate <= 1.0) || !(cfg.negation_rate >= 0.0 && cfg.negation_rate <= 1.0) ||
        !(cfg.brief_rate >= 0.0 && cfg.brief_rate <= 1.0)) {
        throw ConfigError("synthetic motif_rate, negation_rate and brief_rate must lie in [0, 1]");
    }

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int c_n = cfg.classes, p = cfg.num_patches, d = cfg.patch_dim;
    const auto names = synthetic_class_names(c_n);

    std::vector<Matrix> templates(static_cast<std::size_t>(c_n), Matrix(p, d));
    Matrix template_rows(c_n, p * d);
    for (int c = 0; c < c_n; ++c) {
        auto& t = templates[static_cast<std::size_t>(c)];
        for (int r = 0; r < p; ++r) {
            for (int k = 0; k < d; ++k) t(r, k) = normal(rng);
        }
        for (int r = 0; r < p; ++r) template_rows.block(c, r * d, 1, d) = t.row(r);
    }

    fs::create_directories(dir / "features");
    DatasetManifest m;
    m.name = cfg.name;
    m.categories = names;
    m.image_mode = ImageMode::patch_features;
    m.num_patches = p;
    m.patch_dim = d;
    m.source_note = "synthetic planted-class data: classes=" + std::to_string(c_n) + " per_class=" + std::to_string(cfg.per_class) +
                    " sigma=" + io::format_double(cfg.sigma) + " seed=" + std::to_string(cfg.seed) +
                    (cfg.multi_label ? " multi_label" : "");
    m.counts = {{Split::train, 0}, {Split::val, 0}, {Split::test, 0}};

    const int n_train = static_cast<int>(std::lround(0.6 * cfg.per_class));
    const int n_val = std::min(cfg.per_class - n_train, static_cast<int>(std::lround(0.2 * cfg.per_class)));

    std::ostringstream records;
    int next = 0;
    for (int c = 0; c < c_n; ++c) {
        std::vector<int> order(static_cast<std::size_t>(cfg.per_class));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<Split> split_of(static_cast<std::size_t>(cfg.per_class));
        for (int k = 0; k < cfg.per_class; ++k) {
            const int pos = order[static_cast<std::size_t>(k)];
            split_of[static_cast<std::size_t>(pos)] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
        }
        for (int k = 0; k < cfg.per_class; ++k) {
            std::vector<int> positives{c};
            if (cfg.multi_label && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
                int other = std::uniform_int_distribution<int>(0, c_n - 2)(rng);
                if (other >= c) ++other;
                positives.push_back(other);
            }
            Matrix img = Matrix::Zero(p, d);
            for (int q : positives) img += templates[static_cast<std::size_t>(q)];
            img /= static_cast<double>(positives.size());
            for (Eigen::Index r = 0; r < img.rows(); ++r) {
                for (Eigen::Index col = 0; col < img.cols(); ++col) img(r, col) += cfg.sigma * normal(rng);
            }

            std::vector<std::string> clauses;
            for (int q : positives) {
                std::string clause = "findings suggesting " + lower(names[static_cast<std::size_t>(q)]);
                if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.motif_rate) {
                    auto motif = synthetic_motif(q);
                    std::shuffle(motif.begin(), motif.end(), rng);
                    for (const auto& w : motif) clause += " " + w;
                }
                clauses.push_back(clause);
            }
            std::vector<int> negatives;
            for (int q = 0; q < c_n; ++q) {
                if (std::find(positives.begin(), positives.end(), q) == positives.end()) negatives.push_back(q);
            }
            // Absent classes are negated at negation_rate, at least one per report.
            if (!negatives.empty()) {
                std::vector<int> negated;
                for (int q : negatives) {
                    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.negation_rate) negated.push_back(q);
                }
                if (negated.empty()) negated.push_back(negatives[std::uniform_int_distribution<std::size_t>(0, negatives.size() - 1)(rng)]);
                for (int q : negated) clauses.push_back("no evidence of " + lower(names[static_cast<std::size_t>(q)]));
            }
            for (int f = 0; f < 2; ++f) {
                const int len = std::uniform_int_distribution<int>(2, 4)(rng);
                std::string clause;
                for (int w = 0; w < len; ++w) {
                    clause += (w ? " " : "") + std::string(kFiller[std::uniform_int_distribution<std::size_t>(0, std::size(kFiller) - 1)(rng)]);
                }
                clauses.push_back(clause);
            }
            if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.brief_rate) {
                // Positive clauses come first; the negated ones follow them.
                const std::size_t n_pos = positives.size();
                const std::size_t n_neg = clauses.size() - 2 - n_pos;
                const bool negative = n_neg > 0 && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
                const std::size_t pick = negative ? n_pos + std::uniform_int_distribution<std::size_t>(0, n_neg - 1)(rng)
                                                  : std::uniform_int_distribution<std::size_t>(0, n_pos - 1)(rng);
                clauses = {clauses[pick]};
            }
            std::shuffle(clauses.begin(), clauses.end(), rng);
            std::string report;
            for (const auto& cl : clauses) report += (report.empty() ? "" : ". ") + cl;
            report += ".";

            const std::string id = sample_id(next++);
            const std::string rel = "features/" + id + ".bin";
            io::write_array(dir / rel, img);
            std::vector<int> labels(static_cast<std::size_t>(c_n), 0);
            for (int q : positives) labels[static_cast<std::size_t>(q)] = 1;
            const Split s = split_of[static_cast<std::size_t>(k)];
            ++m.counts[s];
            json rec = {{"sample_id", id}, {"features_path", rel}, {"report", report}, {"labels", labels},
                        {"split", std::string(to_string(s))}};
            records << rec.dump() << '\n';
        }
    }
    io::write_text(dir / m.records, records.str());
    m.save(dir / "manifest.txt");
    io::write_array(dir / "templates.bin", template_rows);

    knowledge::CategoryCorpus corpus;
    corpus.id = knowledge::CorpusId::custom;
    for (int c = 0; c < c_n; ++c) {
        const auto motif = synthetic_motif(c);
        corpus.entries.push_back({names[static_cast<std::size_t>(c)], names[static_cast<std::size_t>(c)] + " appears as " + motif[0] +
                                                                          ", " + motif[1] + " and " + motif[2] + " on the chest film."});
    }
    io::write_text(dir / "corpus.tsv", knowledge::serialize_corpus(corpus));
    return {dir / "manifest.txt", dir / "corpus.tsv", dir / "templates.bin", names};
}

int nearest_template(const Matrix& templates, const Matrix& image) {
    const Eigen::Index flat = image.size();
    if (templates.cols() != flat) throw ConfigError("template width does not match the image size");
    Eigen::RowVectorXd v(flat);
    for (Eigen::Index r = 0; r < image.rows(); ++r) v.segment(r * image.cols(), image.cols()) = image.row(r);
    Eigen::Index best = 0;
    (templates.rowwise() - v).rowwise().squaredNorm().minCoeff(&best);
    return static_cast<int>(best);
}

std::vector<PairedSample> split_fraction(const std::vector<PairedSample>& samples, std::size_t num_categories, double fraction,
                                         std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
    if (samples.empty()) throw DataError("cannot take a fraction of an empty split");
    // Stratum per primary label; unlabeled samples form one extra stratum.
    const std::size_t strata = num_categories + 1;
    std::vector<std::vector<std::size_t>> members(strata);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int pl = samples[i].primary_label();
        members[pl < 0 ? num_categories : static_cast<std::size_t>(pl)].push_back(i);
    }
    for (std::size_t c = 0; c < num_categories; ++c) {
        if (members[c].empty()) throw DataError("stratification impossible: category " + std::to_string(c) + " has no samples");
    }
    // Largest-remainder allocation of round(fraction * total).
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(samples.size())));
    std::vector<std::size_t> take(strata);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < strata; ++c) {
        const double exact = fraction * static_cast<double>(members[c].size());
        take[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += take[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [r, c] : remainders) {
        if (assigned >= target) break;
        if (take[c] < members[c].size()) {
            ++take[c];
            ++assigned;
        }
    }
    for (std::size_t c = 0; c < num_categories; ++c) take[c] = std::max<std::size_t>(take[c], 1);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < strata; ++c) {
        auto idx = members[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<PairedSample> out;
    out.reserve(chosen.size());
    for (auto i : chosen) out.push_back(samples[i]);
    return out;
}

Matrix label_matrix(const std::vector<PairedSample>& samples) {
    if (samples.empty()) return Matrix();
    Matrix out(static_cast<Eigen::Index>(samples.size()), samples.front().labels.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = samples[i].labels;
    return out;
}

}  // namespace dfat::data
