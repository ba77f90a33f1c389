#include "dfat/corpus.hpp"
#include "dfat/data_ingest.hpp"
#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <cstdlib>
#include <limits>
#include <set>

using namespace dfat;
using namespace dfat::data;
using dfat::testing::random_matrix;
using dfat::testing::TempDir;

namespace {

void write_fixture(const TempDir& dir, const std::string& records, int count_train = 2) {
    DatasetManifest m;
    m.name = "fixture";
    m.categories = {"Edema", "Pneumothorax", "Nodule"};
    m.num_patches = 2;
    m.patch_dim = 3;
    m.counts[Split::train] = count_train;
    m.counts[Split::test] = 1;
    m.save(dir / "manifest.txt");
    for (int k = 0; k < 3; ++k) io::write_array(dir / ("f" + std::to_string(k) + ".bin"), random_matrix(2, 3, 100 + k));
    io::write_text(dir / "records.jsonl", records);
}

const std::string kRecords =
    R"({"sample_id":"a","features_path":"f0.bin","report":"FINDINGS: edema. IMPRESSION: mild.","labels":[1,0,0],"split":"train"})"
    "\n"
    R"({"sample_id":"b","features_path":"f1.bin","report":"clear lungs","labels":["Pneumothorax","Nodule"],"split":"train"})"
    "\n\n"
    R"({"sample_id":"c","features_path":"f2.bin","report":"","labels":[0,0,0],"split":"test"})"
    "\n";

// Nearest template by explicit loops over the flattened image.
int nearest_by_loops(const Matrix& templates, const Matrix& image) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < templates.rows(); ++c) {
        double d = 0.0;
        for (Eigen::Index r = 0; r < image.rows(); ++r) {
            for (Eigen::Index k = 0; k < image.cols(); ++k) {
                const double diff = templates(c, r * image.cols() + k) - image(r, k);
                d += diff * diff;
            }
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

double template_accuracy(const SynthResult& r) {
    const auto ds = load_dataset(r.manifest);
    const Matrix templates = io::read_array(r.templates);
    int hit = 0;
    for (const auto& s : ds.samples) {
        const int guess = nearest_by_loops(templates, s.image);
        CHECK(guess == nearest_template(templates, s.image));
        hit += guess == s.primary_label();
    }
    return static_cast<double>(hit) / static_cast<double>(ds.samples.size());
}

std::vector<PairedSample> labelled(int classes, int per_class) {
    std::vector<PairedSample> out;
    for (int c = 0; c < classes; ++c) {
        for (int k = 0; k < per_class; ++k) {
            PairedSample s;
            s.sample_id = std::to_string(c) + "_" + std::to_string(k);
            s.labels = Eigen::RowVectorXd::Zero(classes);
            s.labels[c] = 1.0;
            out.push_back(s);
        }
    }
    return out;
}

std::set<std::string> ids(const std::vector<PairedSample>& v) {
    std::set<std::string> out;
    for (const auto& s : v) out.insert(s.sample_id);
    return out;
}

}  // namespace

TEST_CASE("fixture dataset loads with both label encodings") {
    TempDir dir("ingest");
    write_fixture(dir, kRecords);
    const auto ds = load_dataset(dir / "manifest.txt");
    REQUIRE(ds.samples.size() == 3);
    CHECK(ds.num_categories() == 3);
    CHECK(ds.samples[0].labels == Eigen::RowVector3d(1, 0, 0));
    CHECK(ds.samples[1].labels == Eigen::RowVector3d(0, 1, 1));
    CHECK(ds.samples[1].primary_label() == 1);
    CHECK(ds.samples[2].primary_label() == -1);
    CHECK(ds.samples[2].split == Split::test);
    CHECK(ds.samples[1].image == random_matrix(2, 3, 101));
    CHECK(ds.split(Split::train).size() == 2);
    CHECK(label_matrix(ds.samples).rows() == 3);

    LoadOptions opt;
    opt.report_filter = findings_and_impression;
    CHECK(load_dataset(dir / "manifest.txt", opt).samples[0].report == "edema. mild.");
}

TEST_CASE("malformed records name the offending sample") {
    TempDir dir("ingest");
    std::string bad = kRecords;
    bad.replace(bad.find("[1,0,0]"), 7, "[1,0]");
    write_fixture(dir, bad);
    try {
        load_dataset(dir / "manifest.txt");
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("record `a`") != std::string::npos);
        CHECK(std::string(e.what()).find("expected 3") != std::string::npos);
    }

    write_fixture(dir, kRecords, 5);
    CHECK_THROWS_AS(load_dataset(dir / "manifest.txt"), DataError);

    std::string unknown = kRecords;
    unknown.replace(unknown.find("\"Nodule\""), 8, "\"Unicorn\"");
    write_fixture(dir, unknown);
    CHECK_THROWS_AS(load_dataset(dir / "manifest.txt"), DataError);

    std::string empty_train = kRecords;
    empty_train.replace(empty_train.find("clear lungs"), 11, "  ");
    write_fixture(dir, empty_train);
    CHECK_THROWS_AS(load_dataset(dir / "manifest.txt"), DataError);

    write_fixture(dir, kRecords + "{not json\n");
    CHECK_THROWS_AS(load_dataset(dir / "manifest.txt"), DataError);
}

TEST_CASE("shuffling is seeded and stays within splits") {
    TempDir dir("ingest");
    const auto r = make_synthetic({}, dir.path());
    LoadOptions a, b;
    a.shuffle_seed = 3;
    b.shuffle_seed = 3;
    const auto x = load_dataset(r.manifest, a), y = load_dataset(r.manifest, b), plain = load_dataset(r.manifest);
    bool differs = false;
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
        CHECK(x.samples[i].sample_id == y.samples[i].sample_id);
        differs |= x.samples[i].sample_id != plain.samples[i].sample_id;
    }
    CHECK(differs);
    CHECK(ids(x.split(Split::val)) == ids(plain.split(Split::val)));
}

TEST_CASE("findings and impression extraction") {
    CHECK(findings_and_impression("INDICATION: cough. FINDINGS: small effusion. IMPRESSION: effusion.") ==
          "small effusion. effusion.");
    CHECK(findings_and_impression("no headers here") == "no headers here");
    CHECK(findings_and_impression("HISTORY: fever only") == "HISTORY: fever only");
}

TEST_CASE("noise-free synthetic images sit on their templates") {
    TempDir dir("synth");
    SynthConfig cfg;
    cfg.sigma = 0.0;
    CHECK(template_accuracy(make_synthetic(cfg, dir.path())) == 1.0);
}

TEST_CASE("low-noise synthetic data is separable by template") {
    TempDir dir("synth");
    SynthConfig cfg;
    cfg.classes = 4;
    cfg.per_class = 50;
    cfg.sigma = 0.1;
    const auto r = make_synthetic(cfg, dir.path());
    CHECK(r.categories == synthetic_class_names(4));
    CHECK(template_accuracy(r) >= 0.99);
    const auto ds = load_dataset(r.manifest);
    CHECK(ds.samples.size() == 200);
    CHECK(knowledge::load_corpus(r.corpus, knowledge::CorpusId::custom).names() == r.categories);
    // Each mentioned class is either positive or explicitly negated, and
    // every report mentions at least one class.
    for (const auto& s : ds.samples) {
        std::string text = s.report;
        for (auto& ch : text) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        int mentions = 0;
        for (std::size_t c = 0; c < r.categories.size(); ++c) {
            std::string name = r.categories[c];
            for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            const auto at = text.find(name);
            if (at == std::string::npos) continue;
            ++mentions;
            const bool negated = at >= 15 && text.compare(at - 15, 15, "no evidence of ") == 0;
            CHECK(negated == (s.labels[static_cast<Eigen::Index>(c)] == 0.0));
        }
        CHECK(mentions >= 1);
    }
}

TEST_CASE("synthetic output is byte-identical for a seed") {
    TempDir a("synth"), b("synth"), c("synth");
    SynthConfig cfg;
    cfg.multi_label = true;
    make_synthetic(cfg, a.path());
    make_synthetic(cfg, b.path());
    cfg.seed = 8;
    make_synthetic(cfg, c.path());
    for (const char* f : {"records.jsonl", "manifest.txt", "templates.bin", "corpus.tsv"}) {
        CHECK(io::read_text(a / f) == io::read_text(b / f));
    }
    CHECK(io::read_text(a / "records.jsonl") != io::read_text(c / "records.jsonl"));

    SynthConfig bad;
    bad.brief_rate = 1.5;
    CHECK_THROWS_AS(make_synthetic(bad, a.path()), ConfigError);
    bad = {};
    bad.sigma = -1.0;
    CHECK_THROWS_AS(make_synthetic(bad, a.path()), ConfigError);
}

TEST_CASE("stratified fractions") {
    const auto all = labelled(4, 25);
    const auto full = split_fraction(all, 4, 1.0, 1);
    CHECK(ids(full) == ids(all));

    const auto tenth = split_fraction(all, 4, 0.1, 1);
    CHECK(tenth.size() >= 9);
    CHECK(tenth.size() <= 11);
    std::vector<int> per(4, 0);
    for (const auto& s : tenth) ++per[static_cast<std::size_t>(s.primary_label())];
    for (int n : per) CHECK(n >= 1);
    CHECK(ids(split_fraction(all, 4, 0.1, 1)) == ids(tenth));
    CHECK(ids(split_fraction(all, 4, 0.1, 2)) != ids(tenth));

    const auto tiny = split_fraction(all, 4, 0.01, 1);
    CHECK(tiny.size() == 4);
    CHECK_THROWS_AS(split_fraction(all, 4, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_fraction(labelled(3, 5), 4, 0.5, 1), DataError);
}

TEST_CASE("relative manifests resolve against the data root") {
    TempDir dir("root");
    write_fixture(dir, kRecords);
    ::setenv("DFAT_DATA_ROOT", dir.path().c_str(), 1);
    CHECK(resolve_manifest_path("manifest.txt") == dir / "manifest.txt");
    CHECK(load_dataset("manifest.txt").samples.size() == 3);
    CHECK(resolve_manifest_path("/abs/manifest.txt") == fs::path("/abs/manifest.txt"));
    ::unsetenv("DFAT_DATA_ROOT");
    CHECK(resolve_manifest_path("manifest.txt") == fs::path("manifest.txt"));
}

TEST_CASE("raw images are cut into square patches") {
    TempDir dir("raw");
    DatasetManifest m;
    m.name = "raw";
    m.categories = {"A"};
    m.image_mode = ImageMode::raw;
    m.raw_height = 4;
    m.raw_width = 4;
    m.raw_channels = 2;
    m.patch_size = 2;
    m.num_patches = 4;
    m.patch_dim = 8;
    m.save(dir / "manifest.txt");
    Matrix raw(4, 8);
    for (Eigen::Index r = 0; r < 4; ++r)
        for (Eigen::Index c = 0; c < 8; ++c) raw(r, c) = static_cast<double>(r * 8 + c);
    io::write_array(dir / "img.bin", raw);
    io::write_text(dir / "records.jsonl",
                   R"({"sample_id":"r","image_path":"img.bin","report":"x","labels":[1],"split":"train"})"
                   "\n");
    const auto ds = load_dataset(dir / "manifest.txt");
    const Matrix& p = ds.samples[0].image;
    REQUIRE(p.rows() == 4);
    REQUIRE(p.cols() == 8);
    // Patch (ty, tx), pixel (dy, dx), channel ch lives at raw(2ty+dy, (2tx+dx)*2+ch).
    for (int ty = 0; ty < 2; ++ty)
        for (int tx = 0; tx < 2; ++tx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int ch = 0; ch < 2; ++ch) CHECK(p(ty * 2 + tx, (dy * 2 + dx) * 2 + ch) == raw(2 * ty + dy, (2 * tx + dx) * 2 + ch));

    m.patch_size = 3;
    CHECK_THROWS_AS(m.validate(), DataError);
}
