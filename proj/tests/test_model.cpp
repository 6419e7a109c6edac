#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <vector>

#include "msi/datagen.hpp"
#include "msi/errors.hpp"
#include "msi/io.hpp"
#include "msi/model.hpp"

using namespace msi;

namespace {

LabeledImageBatch tiny_dataset(std::uint64_t seed, std::int64_t count) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.count = count;
    return generate_synthetic(spec);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed") {
    ClassifierArch arch;
    Rng r1(7), r2(7), r3(8);
    Classifier a = Classifier::init(arch, r1);
    Classifier b = Classifier::init(arch, r2);
    Classifier c = Classifier::init(arch, r3);
    CHECK(a.parameter_hash() == b.parameter_hash());
    CHECK(a.parameter_hash() != c.parameter_hash());
    CHECK(arch.feature_size() == 4);
    CHECK(arch.feature_channels() == 64);
}

TEST_CASE("save/load round-trips weights bit-exactly") {
    ClassifierArch arch;
    Rng rng(5);
    Classifier model = Classifier::init(arch, rng);
    model.save("clf.tmp");
    model.save("clf2.tmp");
    CHECK(slurp("clf.tmp") == slurp("clf2.tmp"));

    Classifier back = Classifier::load("clf.tmp");
    CHECK(back.parameter_hash() == model.parameter_hash());
    CHECK_FALSE(back.frozen());

    LabeledImageBatch d = tiny_dataset(1, 4);
    Prediction pa = model.predict(d.images);
    Prediction pb = back.predict(d.images);
    CHECK(pa.logits.data() == pb.logits.data());
    CHECK(pa.argmax == pb.argmax);

    model.freeze();
    model.save("clf.tmp");
    CHECK(Classifier::load("clf.tmp").frozen());
    std::remove("clf.tmp");
    std::remove("clf2.tmp");
}

TEST_CASE("frozen parameters receive no gradient") {
    ClassifierArch arch;
    Rng rng(6);
    Classifier model = Classifier::init(arch, rng);
    model.freeze();
    LabeledImageBatch d = tiny_dataset(2, 4);
    Tensor loss = cross_entropy(model.forward(d.images), d.labels);
    // With every parameter frozen the loss carries no tape at all.
    CHECK_FALSE(loss.requires_grad());
    CHECK_THROWS_AS(backward(loss), UsageError);
    for (auto& p : model.parameters()) {
        CHECK_FALSE(p.requires_grad());
        CHECK_FALSE(p.has_grad());
    }
}

TEST_CASE("predictions are equivariant under batch reordering") {
    ClassifierArch arch;
    Rng rng(9);
    Classifier model = Classifier::init(arch, rng);
    LabeledImageBatch d = tiny_dataset(3, 6);
    Prediction full = model.predict(d.images);
    LabeledImageBatch rev = take(d, {5, 4, 3, 2, 1, 0});
    Prediction back = model.predict(rev.images);
    const std::int64_t classes = full.logits.shape()[1];
    for (std::int64_t i = 0; i < 6; ++i) {
        for (std::int64_t c = 0; c < classes; ++c) {
            CHECK(full.logits.data()[static_cast<std::size_t>(i * classes + c)] ==
                  back.logits.data()[static_cast<std::size_t>((5 - i) * classes + c)]);
        }
    }
}

TEST_CASE("zero-epoch training returns the seeded initialization") {
    LabeledImageBatch d = tiny_dataset(4, 10);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 77;
    Classifier trained = train_classifier(d, cfg);
    ClassifierArch arch;
    Rng rng = Rng(77).split(0xBA5E);
    Classifier init = Classifier::init(arch, rng);
    CHECK(trained.parameter_hash() == init.parameter_hash());
}

TEST_CASE("training memorizes a small dataset") {
    LabeledImageBatch d = tiny_dataset(42, 100);
    TrainConfig cfg;
    cfg.epochs = 80;
    cfg.seed = 0;
    TrainStats stats;
    Classifier model = train_classifier(d, cfg, nullptr, &stats);
    CHECK(stats.train_accuracy >= 0.9f);
    REQUIRE(stats.epoch_loss.size() == 80);
    // Loss must have dropped substantially from the ~ln(10) start.
    CHECK(stats.epoch_loss.front() > 2.0f);
    CHECK(stats.epoch_loss.back() < 0.7f);
    CHECK(accuracy(model, d) == stats.train_accuracy);
}

TEST_CASE("training is deterministic in the seed") {
    LabeledImageBatch d = tiny_dataset(8, 30);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 5;
    Classifier a = train_classifier(d, cfg);
    Classifier b = train_classifier(d, cfg);
    CHECK(a.parameter_hash() == b.parameter_hash());
    cfg.seed = 6;
    Classifier c = train_classifier(d, cfg);
    CHECK(a.parameter_hash() != c.parameter_hash());
}

TEST_CASE("absurd learning rates surface as training divergence") {
    LabeledImageBatch d = tiny_dataset(9, 30);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.lr = 1e30f;
    CHECK_THROWS_WITH_AS(static_cast<void>(train_classifier(d, cfg)),
                         doctest::Contains("diverged"), TrainingError);
    cfg.lr = -1.0f;
    CHECK_THROWS_AS(static_cast<void>(train_classifier(d, cfg)), ConfigError);
}
