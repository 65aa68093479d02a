#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "csifp/contrastive.hpp"
#include "csifp/sha256.hpp"
#include "grad_check.hpp"

using namespace csifp;
using namespace csifp::contra;

namespace {

// Scalar enumerations of the two loss directions, written without any
// vectorization or max-subtraction so they form an independent route.
double oracle_row_loss(const Eigen::MatrixXd& s, const std::vector<int>& labels) {
    const int b = static_cast<int>(s.rows());
    double total = 0.0;
    int counted = 0;
    for (int i = 0; i < b; ++i) {
        double num = 0.0, den = 0.0;
        bool any = false;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            den += std::exp(s(i, j));
            if (labels[(std::size_t)j] == labels[(std::size_t)i]) {
                num += std::exp(s(i, j));
                any = true;
            }
        }
        if (!any) continue;
        total += -std::log(num / den);
        ++counted;
    }
    return total / counted;
}

double oracle_col_loss(const Eigen::MatrixXd& s, const std::vector<int>& labels) {
    const int b = static_cast<int>(s.rows());
    double total = 0.0;
    int counted = 0;
    for (int j = 0; j < b; ++j) {
        double num = 0.0, den = 0.0;
        bool any = false;
        for (int k = 0; k < b; ++k) {
            if (k == j) continue;
            den += std::exp(s(k, j));
            if (labels[(std::size_t)k] == labels[(std::size_t)j]) {
                num += std::exp(s(k, j));
                any = true;
            }
        }
        if (!any) continue;
        total += -std::log(num / den);
        ++counted;
    }
    return total / counted;
}

double oracle_contrastive(const Eigen::MatrixXd& s, const std::vector<int>& labels) {
    return 0.5 * (oracle_row_loss(s, labels) + oracle_col_loss(s, labels));
}

MacAddress sim_mac(int idx) {
    MacAddress mac;
    mac.bytes = {0x02, 0, 0, 0, 0, static_cast<std::uint8_t>(idx + 1)};
    return mac;
}

CsiWindow toy_window(int label, int n, Rng& rng) {
    CsiWindow w;
    w.label = label;
    w.source_mac = sim_mac(label);
    w.data.resize(kCsiInts, n);
    for (Eigen::Index r = 0; r < w.data.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.data.cols(); ++c) {
            // Separable classes: distinct mean pattern per label plus noise.
            const double pattern = std::sin(0.17 * static_cast<double>(r) * (label + 1));
            w.data(r, c) = pattern + 0.1 * rng.normal();
        }
    }
    return w;
}

}  // namespace

TEST_CASE("sha256 pins to the published test vectors") {
    CHECK(hex_string(sha256(std::string_view("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(hex_string(sha256(std::string_view(""))) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("label_base_code: deterministic, tiled, z-scored") {
    const auto mac = MacAddress::parse("aa:bb:cc:dd:ee:ff");
    const auto code_a = label_base_code(mac, 64);
    const auto code_b = label_base_code(mac, 64);
    CHECK(code_a == code_b);

    // Independent recomputation of the digest via the EVP one-shot API.
    unsigned char digest[32];
    unsigned int len = 0;
    const std::string text = mac.str();
    REQUIRE(EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) == 1);
    REQUIRE(len == 32);

    SUBCASE("H=32: z-scored bytes of one digest, no tiling") {
        const auto code = label_base_code(mac, 32);
        double mean = 0;
        for (int i = 0; i < 32; ++i) mean += digest[i];
        mean /= 32.0;
        double var = 0;
        for (int i = 0; i < 32; ++i) var += (digest[i] - mean) * (digest[i] - mean);
        const double std = std::sqrt(var / 32.0);
        for (int i = 0; i < 32; ++i) {
            CHECK(code[i] == doctest::Approx((digest[i] - mean) / std).epsilon(1e-12));
        }
        CHECK(std::abs(code.mean()) < 1e-12);
        CHECK(std::abs(code.squaredNorm() / 32.0 - 1.0) < 1e-12);
    }
    SUBCASE("H=64: second half repeats the digest before z-scoring") {
        // The pre-z-score sequence tiles the digest, so entries i and i+32
        // agree after the affine z-score as well.
        for (int i = 0; i < 32; ++i) CHECK(code_a[i] == code_a[i + 32]);
        // And the ordering of values matches the byte ordering of the digest.
        for (int i = 1; i < 32; ++i) {
            CHECK((code_a[i] > code_a[i - 1]) == (digest[i] > digest[i - 1]));
        }
    }
    SUBCASE("H=16 truncates") {
        const auto code = label_base_code(mac, 16);
        CHECK(code.size() == 16);
    }
}

TEST_CASE("similarity_matrix") {
    SUBCASE("orthonormal rows give the identity at tau=1") {
        const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(3, 3);
        CHECK((similarity_matrix(z, z, 1.0) - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
    }
    SUBCASE("halving tau doubles every entry") {
        Rng rng(2);
        Eigen::MatrixXd zc(4, 3), zl(4, 3);
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 3; ++j) {
                zc(i, j) = rng.normal();
                zl(i, j) = rng.normal();
            }
        }
        zc = nn::l2_normalize_rows(zc);
        zl = nn::l2_normalize_rows(zl);
        const auto s1 = similarity_matrix(zc, zl, 1.0);
        const auto s2 = similarity_matrix(zc, zl, 0.5);
        CHECK((s2 - 2.0 * s1).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("matches a scalar triple loop to 1e-12") {
        Rng rng(3);
        const int b = 4, d = 3;
        Eigen::MatrixXd zc(b, d), zl(b, d);
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < d; ++j) {
                zc(i, j) = rng.normal();
                zl(i, j) = rng.normal();
            }
        }
        const double tau = 0.3;
        const auto s = similarity_matrix(zc, zl, tau);
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < b; ++j) {
                double dot = 0.0;
                for (int k = 0; k < d; ++k) dot += zc(i, k) * zl(j, k);
                CHECK(std::abs(s(i, j) - dot / tau) < 1e-12);
            }
        }
    }
    SUBCASE("nonpositive tau is rejected") {
        const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(2, 2);
        CHECK_THROWS_AS(similarity_matrix(z, z, 0.0), std::invalid_argument);
    }
}

TEST_CASE("loss_contrastive: B=2 same class is exactly zero") {
    Eigen::MatrixXd s(2, 2);
    s << 0.3, -1.7, 2.5, 0.9;
    const std::vector<int> labels = {4, 4};
    CHECK(loss_contrastive(s, labels) == 0.0);
}

TEST_CASE("loss_contrastive: uniform similarities give -log((c-1)/(B-1))") {
    const int b = 6, c = 2;  // 3 classes x 2 members
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(b, b, 0.42);
    const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    const double expected = -std::log(static_cast<double>(c - 1) / (b - 1));
    CHECK(loss_contrastive(s, labels) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss_contrastive matches the scalar oracle on seeded batches") {
    Rng rng(1234);
    const std::vector<std::vector<int>> label_sets = {
        {0, 0, 1, 1, 2, 2},        // uniform multiplicity 2
        {0, 0, 0, 1, 1, 1},        // multiplicity 3
        {0, 0, 0, 1, 1, 2},        // mixed; singleton class 2 excluded
        {3, 1, 1, 3, 2, 2, 1, 3},  // shuffled mixed
    };
    for (const auto& labels : label_sets) {
        for (int rep = 0; rep < 5; ++rep) {
            const int b = static_cast<int>(labels.size());
            Eigen::MatrixXd s(b, b);
            for (int i = 0; i < b; ++i) {
                for (int j = 0; j < b; ++j) s(i, j) = rng.uniform(-3.0, 3.0);
            }
            const double got = loss_contrastive(s, labels);
            const double want = oracle_contrastive(s, labels);
            CHECK(std::abs(got - want) < 1e-10);
        }
    }
}

TEST_CASE("loss_contrastive: batch permutation invariance to 1e-12") {
    Rng rng(77);
    const int b = 8;
    Eigen::MatrixXd s(b, b);
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < b; ++j) s(i, j) = rng.uniform(-2.0, 2.0);
    }
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
    const double base = loss_contrastive(s, labels);

    const std::vector<int> perm = {5, 2, 7, 0, 3, 6, 1, 4};
    Eigen::MatrixXd sp(b, b);
    std::vector<int> lp(b);
    for (int i = 0; i < b; ++i) {
        lp[(std::size_t)i] = labels[(std::size_t)perm[(std::size_t)i]];
        for (int j = 0; j < b; ++j) sp(i, j) = s(perm[(std::size_t)i], perm[(std::size_t)j]);
    }
    CHECK(std::abs(loss_contrastive(sp, lp) - base) < 1e-12);
}

TEST_CASE("loss_contrastive: multi-positive pooling identity with shared label columns") {
    // Same-class items share one label embedding, so their columns coincide:
    // the row numerator collapses to |P(i)| * exp(S_i,pos).
    Rng rng(9);
    const std::vector<int> labels = {0, 0, 0, 1, 1};
    const int b = 5;
    Eigen::VectorXd per_class_score[2];
    Eigen::MatrixXd s(b, b);
    for (int i = 0; i < b; ++i) {
        const double to_c0 = rng.uniform(-1.0, 1.0);
        const double to_c1 = rng.uniform(-1.0, 1.0);
        for (int j = 0; j < b; ++j) s(i, j) = labels[(std::size_t)j] == 0 ? to_c0 : to_c1;
    }
    double expected_row = 0.0;
    for (int i = 0; i < b; ++i) {
        const int p_count = labels[(std::size_t)i] == 0 ? 2 : 1;
        const double pos = s(i, i);  // same-class column value for anchor i
        double den = 0.0;
        for (int k = 0; k < b; ++k) {
            if (k != i) den += std::exp(s(i, k));
        }
        expected_row += -std::log(p_count * std::exp(pos) / den);
    }
    expected_row /= b;
    CHECK(oracle_row_loss(s, labels) == doctest::Approx(expected_row).epsilon(1e-12));
    const double expected = 0.5 * (expected_row + oracle_col_loss(s, labels));
    CHECK(loss_contrastive(s, labels) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss_contrastive: all-singleton batch is rejected") {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 3);
    CHECK_THROWS_AS(loss_contrastive(s, {0, 1, 2}), std::invalid_argument);
}

TEST_CASE("loss_cross_entropy") {
    SUBCASE("saturated logits drive the loss to zero") {
        Eigen::MatrixXd s(1, 2);
        s << 50.0, -50.0;
        CHECK(loss_cross_entropy(s, {0}) < 1e-12);
    }
    SUBCASE("uniform logits give log L") {
        const int l = 7;
        Eigen::MatrixXd s = Eigen::MatrixXd::Constant(3, l, 1.3);
        CHECK(loss_cross_entropy(s, {0, 3, 6}) == doctest::Approx(std::log((double)l)).epsilon(1e-12));
    }
    SUBCASE("matches a scalar softmax oracle") {
        Rng rng(5);
        Eigen::MatrixXd s(4, 3);
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 3; ++j) s(i, j) = rng.uniform(-2.0, 2.0);
        }
        const std::vector<int> labels = {2, 0, 1, 1};
        double want = 0.0;
        for (int i = 0; i < 4; ++i) {
            double den = 0.0;
            for (int k = 0; k < 3; ++k) den += std::exp(s(i, k));
            want += -std::log(std::exp(s(i, labels[(std::size_t)i])) / den);
        }
        want /= 4.0;
        CHECK(std::abs(loss_cross_entropy(s, labels) - want) < 1e-10);
    }
}

TEST_CASE("model: embeddings are unit norm and label embeddings are per-class") {
    ModelConfig cfg;
    cfg.window_len = 2;
    cfg.hidden = {32, 16};
    cfg.embed_dim = 8;
    cfg.code_dim = 16;
    std::vector<MacAddress> macs;
    for (int i = 0; i < 4; ++i) macs.push_back(sim_mac(i));
    const auto table = ClassTable::from_macs(macs);
    Model model(cfg, table, 42);

    Rng rng(1);
    Eigen::MatrixXd x(5, model.input_dim());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    }
    const auto z = model.encode(x);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        CHECK(std::abs(z.row(i).norm() - 1.0) < 1e-6);
    }
    const auto zl = model.class_embeddings();
    CHECK(zl.rows() == 4);
    for (Eigen::Index c = 0; c < zl.rows(); ++c) CHECK(std::abs(zl.row(c).norm() - 1.0) < 1e-6);

    // Same class twice -> identical label embedding (pure function of class).
    const auto zl2 = model.class_embeddings();
    CHECK(zl == zl2);
}

TEST_CASE("model: zeroed final layer with bias b collapses embeddings to b/|b|") {
    ModelConfig cfg;
    cfg.window_len = 1;
    cfg.hidden = {16, 8};
    cfg.embed_dim = 4;
    cfg.code_dim = 8;
    const auto table = ClassTable::from_macs({sim_mac(0), sim_mac(1)});
    Model model(cfg, table, 3);

    model.params.mat(model.params.find("enc.l2.w")).setZero();
    Eigen::VectorXd bias(4);
    bias << 1.0, -2.0, 0.5, 3.0;
    model.params.vec(model.params.find("enc.l2.b")) = bias;

    Rng rng(4);
    Eigen::MatrixXd x(3, model.input_dim());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    }
    const auto z = model.encode(x);
    const Eigen::VectorXd expect = bias / bias.norm();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        CHECK((z.row(i).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("classify: argmax with deterministic tie-breaking and tau invariance") {
    ModelConfig cfg;
    cfg.window_len = 1;
    cfg.hidden = {8};
    cfg.embed_dim = 4;
    cfg.code_dim = 8;
    const auto table = ClassTable::from_macs({sim_mac(0), sim_mac(1), sim_mac(2)});
    Model model(cfg, table, 11);

    SUBCASE("window whose embedding equals a class label embedding maps to it") {
        const auto zl = model.class_embeddings();
        CHECK(model.classify_embedding(zl.row(2).transpose()) == 2);
    }
    SUBCASE("brute-force argmax over classes agrees") {
        Rng rng(6);
        for (int rep = 0; rep < 20; ++rep) {
            Eigen::VectorXd z(4);
            for (int i = 0; i < 4; ++i) z[i] = rng.normal();
            z.normalize();
            const auto zl = model.class_embeddings();
            int best = 0;
            double best_score = zl.row(0).dot(z);
            for (int c = 1; c < 3; ++c) {
                const double score = zl.row(c).dot(z);
                if (score > best_score) {
                    best = c;
                    best_score = score;
                }
            }
            CHECK(model.classify_embedding(z) == best);
        }
    }
    SUBCASE("temperature cancels in the argmax") {
        // classify uses raw dot products; similarity scaling by any positive
        // constant preserves the order.
        Rng rng(7);
        Eigen::VectorXd z(4);
        for (int i = 0; i < 4; ++i) z[i] = rng.normal();
        z.normalize();
        const auto zl = model.class_embeddings();
        const Eigen::VectorXd raw = zl * z;
        const Eigen::VectorXd scaled = raw / 0.07;
        Eigen::Index a, b;
        raw.maxCoeff(&a);
        scaled.maxCoeff(&b);
        CHECK(a == b);
    }
    SUBCASE("identical class embeddings tie to the lowest index") {
        model.params.mat(model.params.find("label.w_mac")).setZero();
        // All pre-normalization label vectors are zero -> replaced by e1.
        Rng rng(8);
        Eigen::VectorXd z(4);
        for (int i = 0; i < 4; ++i) z[i] = rng.normal();
        z.normalize();
        CHECK(model.classify_embedding(z) == 0);
    }
}

TEST_CASE("temperature clamp holds after aggressive updates") {
    ModelConfig cfg;
    cfg.window_len = 1;
    cfg.hidden = {8};
    cfg.embed_dim = 4;
    cfg.code_dim = 8;
    const auto table = ClassTable::from_macs({sim_mac(0), sim_mac(1)});
    Model model(cfg, table, 1);
    model.params.scalar(model.params.find("log_tau")) = std::log(1e-4);
    model.clamp_tau();
    CHECK(1.0 / model.tau() <= 100.0 + 1e-9);
    CHECK(model.tau() == doctest::Approx(0.01));
}

TEST_CASE("gradients match finite differences on a mixed batch") {
    ModelConfig cfg;
    cfg.window_len = 2;
    cfg.hidden = {16, 8};
    cfg.embed_dim = 6;
    cfg.code_dim = 12;
    const auto table = ClassTable::from_macs({sim_mac(0), sim_mac(1), sim_mac(2)});
    Model model(cfg, table, 99);

    Rng rng(12);
    const int b = 6;
    Eigen::MatrixXd x(b, model.input_dim());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    }
    const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    const double alpha_ce = 0.7;

    model.params.zero_grad();
    model.loss_and_grad(x, labels, alpha_ce, /*with_grad=*/true);
    const auto result = finite_diff_check(
        model.params, [&] { return model.loss_and_grad(x, labels, alpha_ce, false).total; });
    CHECK(result.checked == model.params.size());
    CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("train: loss decreases, temperature stays clamped, deterministic checkpoints") {
    ModelConfig mcfg;
    mcfg.window_len = 1;
    mcfg.hidden = {32, 16};
    mcfg.embed_dim = 8;
    mcfg.code_dim = 16;

    TrainConfig tcfg;
    tcfg.epochs = 5;
    tcfg.batch_size = 24;
    tcfg.per_class = 4;
    tcfg.lr = 3e-3;
    tcfg.seed = 2024;

    std::vector<MacAddress> macs = {sim_mac(0), sim_mac(1), sim_mac(2)};
    const auto table = ClassTable::from_macs(macs);
    Rng rng(55);
    std::vector<CsiWindow> train_set, val_set;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 40; ++i) train_set.push_back(toy_window(c, 1, rng));
        for (int i = 0; i < 10; ++i) val_set.push_back(toy_window(c, 1, rng));
    }

    const auto result = train(mcfg, tcfg, train_set, val_set, table);
    CHECK(result.history.size() == 5);
    CHECK(result.history.back().train_contrastive < result.history.front().train_contrastive);
    CHECK(1.0 / result.model.tau() <= 100.0 + 1e-9);
    CHECK(result.best_val_accuracy > 0.8);

    SUBCASE("same seed reproduces the parameters bit for bit") {
        const auto again = train(mcfg, tcfg, train_set, val_set, table);
        CHECK(again.model.params.values == result.model.params.values);

        Normalizer norm;
        save_checkpoint("ckpt_a.bin", result.model, norm, "cfghash");
        save_checkpoint("ckpt_b.bin", again.model, norm, "cfghash");
        std::ifstream a("ckpt_a.bin", std::ios::binary), b("ckpt_b.bin", std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());

        const auto loaded = load_checkpoint("ckpt_a.bin");
        CHECK(loaded.model.params.values == result.model.params.values);
        CHECK(loaded.model.classes().size() == 3);
        CHECK(loaded.config_hash == "cfghash");
        std::remove("ckpt_a.bin");
        std::remove("ckpt_b.bin");
    }

    SUBCASE("alpha_ce = 0 keeps the objective purely contrastive") {
        for (const auto& e : result.history) {
            CHECK(e.train_loss == doctest::Approx(e.train_contrastive).epsilon(1e-12));
        }
    }

    SUBCASE("single class with contrastive-only objective is rejected") {
        std::vector<CsiWindow> single;
        const auto t1 = ClassTable::from_macs({sim_mac(0)});
        for (int i = 0; i < 10; ++i) {
            auto w = toy_window(0, 1, rng);
            w.label = 0;
            single.push_back(std::move(w));
        }
        TrainConfig bad = tcfg;
        bad.alpha_ce = 0.0;
        CHECK_THROWS_AS(train(mcfg, bad, single, {}, t1), std::invalid_argument);
    }
}
