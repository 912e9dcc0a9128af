#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace dpaat;

namespace {

void write_gray(const std::filesystem::path& p, std::size_t h, std::size_t w, std::uint8_t v) {
    write_pnm(p, PnmImage{1, h, w, std::vector<std::uint8_t>(h * w, v)});
}

void write_index(const std::filesystem::path& p, const std::string& body) {
    std::ofstream(p) << "filename,class\n" << body;
}

} // namespace

TEST(Synth, Deterministic) {
    EXPECT_EQ(synth(3, 5, 16, 9).images, synth(3, 5, 16, 9).images);
    EXPECT_EQ(synth(3, 5, 16, 9).labels, synth(3, 5, 16, 9).labels);
    EXPECT_NE(synth(3, 5, 16, 9).images, synth(3, 5, 16, 10).images);
}

TEST(Synth, CenteredNoiselessBlobPeaksAtTheCenter) {
    const Dataset d = synth(3, 2, 32, 1, SynthOptions{0, 0});
    const std::size_t px = 32 * 32;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto img = d.images.data().subspan(i * px, px);
        const auto peak = std::max_element(img.begin(), img.end()) - img.begin();
        EXPECT_EQ(peak, 16 * 32 + 16) << i;
        EXPECT_EQ(img[16 * 32 + 16], 1);
    }
}

TEST(Synth, ShapeLabelsAndRange) {
    const Dataset d = synth(12, 3, 8, 2);
    EXPECT_EQ(d.images.shape(), (Shape{36, 1, 8, 8}));
    EXPECT_EQ(d.class_names.front(), "class00");
    EXPECT_TRUE(std::is_sorted(d.class_names.begin(), d.class_names.end()));
    EXPECT_NO_THROW(d.validate());
    EXPECT_THROW(synth(1, 3, 8, 2), ContractError);
    EXPECT_THROW(synth(3, 0, 8, 2), ContractError);
}

TEST(LoadFolder, LabelsFollowSortedClassNames) {
    testutil::TempDir dir("folder");
    write_gray(dir.path() / "a.pgm", 2, 3, 255);
    write_gray(dir.path() / "b.pgm", 2, 3, 0);
    write_index(dir.path() / "index.csv", "a.pgm,zebra\nb.pgm,apple\n");
    const Dataset d = load_folder(dir.path(), dir.path() / "index.csv");
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.class_names, (std::vector<std::string>{"apple", "zebra"}));
    EXPECT_EQ(d.labels, (Labels{1, 0}));
    EXPECT_EQ(d.images.shape(), (Shape{2, 1, 2, 3}));
    EXPECT_EQ(d.images[0], 1);
    EXPECT_EQ(d.images[6], 0);
}

TEST(LoadFolder, ColorImagesArePlanar) {
    testutil::TempDir dir("folder_rgb");
    write_pnm(dir.path() / "c.ppm", PnmImage{3, 1, 2, {255, 0, 0, 0, 255, 0}});
    write_index(dir.path() / "index.csv", "c.ppm,x\n");
    const Dataset d = load_folder(dir.path(), dir.path() / "index.csv");
    EXPECT_EQ(d.images.shape(), (Shape{1, 3, 1, 2}));
    EXPECT_EQ(d.images.vec(), (std::vector<Real>{1, 0, 0, 1, 0, 0}));
}

TEST(LoadFolder, DistinctErrors) {
    testutil::TempDir dir("folder_err");
    write_gray(dir.path() / "a.pgm", 2, 2, 10);
    write_index(dir.path() / "missing.csv", "a.pgm,x\nnope.pgm,y\n");
    try {
        load_folder(dir.path(), dir.path() / "missing.csv");
        FAIL();
    } catch (const MissingFileError& e) {
        EXPECT_NE(std::string(e.what()).find("nope.pgm"), std::string::npos);
    }
    std::ofstream(dir.path() / "bad.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
    write_index(dir.path() / "bad.csv", "bad.pgm,x\n");
    EXPECT_THROW(load_folder(dir.path(), dir.path() / "bad.csv"), DecodeError);
    write_index(dir.path() / "unknown.csv", "a.pgm,cat\n");
    FolderOptions o;
    o.known_classes = std::vector<std::string>{"dog"};
    EXPECT_THROW(load_folder(dir.path(), dir.path() / "unknown.csv", o), UnknownClassError);
    write_gray(dir.path() / "big.pgm", 3, 3, 10);
    write_index(dir.path() / "mixed.csv", "a.pgm,x\nbig.pgm,x\n");
    EXPECT_THROW(load_folder(dir.path(), dir.path() / "mixed.csv"), DecodeError);
    EXPECT_THROW(load_folder(dir.path(), dir.path() / "absent.csv"), MissingFileError);
    std::ofstream(dir.path() / "trunc.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
    write_index(dir.path() / "trunc.csv", "trunc.pgm,x\n");
    EXPECT_THROW(load_folder(dir.path(), dir.path() / "trunc.csv"), DecodeError);
}

TEST(ExportDataset, RoundTripsQuantizedPixels) {
    testutil::TempDir dir("export");
    Dataset d = synth(3, 4, 8, 5);
    export_dataset(d, dir.path(), "img");
    const Dataset back = load_folder(dir.path(), dir.path() / "index.csv");
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.class_names, d.class_names);
    for (std::size_t i = 0; i < d.images.numel(); ++i) EXPECT_NEAR(back.images[i], d.images[i], 0.5 / 255 + 1e-12);
}

TEST(Split, PerClassCounts) {
    const Dataset d = synth(3, 100, 4, 1);
    const Splits s = split(d, SplitFractions{Real(0.8), Real(0.1), Real(0.1)}, 7);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(std::count(s.train.labels.begin(), s.train.labels.end(), c), 80);
        EXPECT_EQ(std::count(s.val.labels.begin(), s.val.labels.end(), c), 10);
        EXPECT_EQ(std::count(s.test.labels.begin(), s.test.labels.end(), c), 10);
    }
    EXPECT_EQ(s.train.split, SplitTag::Train);
    EXPECT_EQ(s.test.split, SplitTag::Test);
}

TEST(Split, DeterministicDisjointAndComplete) {
    Dataset d = synth(3, 20, 4, 1);
    // Tag each image by its index so membership can be recovered.
    for (std::size_t i = 0; i < d.size(); ++i) d.images[i * 16] = Real(i) / Real(d.size());
    const SplitFractions f{Real(0.7), Real(0.15), Real(0.15)};
    const Splits a = split(d, f, 3), b = split(d, f, 3);
    EXPECT_EQ(a.train.images, b.train.images);
    EXPECT_EQ(a.test.images, b.test.images);
    EXPECT_NE(a.train.images, split(d, f, 4).train.images);
    std::multiset<Real> seen;
    for (const Dataset* s : {&a.train, &a.val, &a.test})
        for (std::size_t i = 0; i < s->size(); ++i) seen.insert(s->images[i * 16]);
    EXPECT_EQ(seen.size(), d.size());
    EXPECT_EQ(std::set<Real>(seen.begin(), seen.end()).size(), d.size());
}

TEST(Split, Errors) {
    const Dataset tiny = synth(2, 2, 4, 1);
    EXPECT_THROW(split(tiny, SplitFractions{}, 0), ContractError);
    const Dataset d = synth(2, 10, 4, 1);
    EXPECT_THROW(split(d, SplitFractions{Real(0.8), Real(0.3), Real(0.1)}, 0), ContractError);
    EXPECT_THROW(split(d, SplitFractions{Real(0.8), Real(0), Real(0.1)}, 0), ContractError);
}

TEST(Dataset, ChecksumTracksContent) {
    Dataset d = synth(2, 3, 4, 1);
    const auto c = d.checksum();
    EXPECT_EQ(c, synth(2, 3, 4, 1).checksum());
    d.labels[0] = 1;
    EXPECT_NE(d.checksum(), c);
}
