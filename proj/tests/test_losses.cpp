#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "comchain/losses.hpp"

#include <cmath>

using namespace comchain;

namespace {

// batch with every pairwise cosine equal (identical unit vectors)
ContrastiveBatch uniform_batch(int64_t n, int64_t m, double tau) {
    ContrastiveBatch b;
    b.image_features = TensorT<double>({n, 3});
    b.text_features = TensorT<double>({n * m, 3});
    for (int64_t i = 0; i < n; ++i) b.image_features.at(i, 0) = 1.0;
    for (int64_t i = 0; i < n * m; ++i) b.text_features.at(i, 0) = 1.0;
    b.captions_per_image = m;
    b.temperature = tau;
    return b;
}

// N=2, M=1 with cosine matrix [[1,0],[0,1]] via orthogonal unit vectors
ContrastiveBatch identity_batch(double tau) {
    ContrastiveBatch b;
    b.image_features = TensorT<double>({2, 2});
    b.text_features = TensorT<double>({2, 2});
    b.image_features.at(0, 0) = 1.0;
    b.image_features.at(1, 1) = 1.0;
    b.text_features.at(0, 0) = 1.0;
    b.text_features.at(1, 1) = 1.0;
    b.captions_per_image = 1;
    b.temperature = tau;
    return b;
}

DistillPair matched_pair(int64_t batch, int64_t d, double alpha) {
    DistillPair p;
    p.teacher = TensorT<double>({batch, d}, 0.5);
    p.student = TensorT<double>({batch, d}, 0.0);
    p.transform_w = TensorT<double>({d, d}, 0.0);
    p.transform_b = TensorT<double>({d}, 0.5);  // T(0) = bias = teacher
    p.alpha = alpha;
    return p;
}

}  // namespace

TEST_CASE("t2v on uniform similarities is ln N for any temperature") {
    for (int64_t n : {2, 4, 8})
        for (double tau : {0.05, 0.5, 1.0, 7.3})
            CHECK(std::fabs(t2v_loss(uniform_batch(n, 1, tau)) - std::log(double(n))) < 1e-6);
    CHECK(t2v_loss(uniform_batch(2, 1, 1.0)) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("hand-enumerated identity-similarity case") {
    // each caption: -log(e / (e + 1)) = log(1 + e^-1)
    const double expected = std::log(1.0 + std::exp(-1.0));
    CHECK(t2v_loss(identity_batch(1.0)) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(v2t_loss(identity_batch(1.0)) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(t2v_loss(identity_batch(1.0)) == doctest::Approx(0.3133).epsilon(1e-3));
}

TEST_CASE("v2t reduces to the transposed structure at M=1 and ln(NM) uniform") {
    CHECK(v2t_loss(identity_batch(0.7)) == doctest::Approx(t2v_loss(identity_batch(0.7))));
    CHECK(v2t_loss(uniform_batch(2, 2, 1.0)) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("task loss averages the two directions") {
    const auto b = identity_batch(1.0);
    CHECK(task_loss(b) == doctest::Approx(0.5 * (t2v_loss(b) + v2t_loss(b))));
    CHECK(task_loss(uniform_batch(2, 1, 1.0)) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("saturated softmax drives the task loss to zero") {
    // matched cosine +1, unmatched -1, tau = 0.01
    ContrastiveBatch b = identity_batch(0.01);
    b.image_features.at(1, 1) = 0.0;
    b.image_features.at(1, 0) = -1.0;  // v1 = -v0
    b.text_features.at(1, 1) = 0.0;
    b.text_features.at(1, 0) = -1.0;
    CHECK(task_loss(b) < 1e-6);
}

TEST_CASE("t2v is invariant under permuting images with their caption groups") {
    Rng rng(5);
    const int64_t n = 4, m = 3, d = 6;
    ContrastiveBatch b;
    b.image_features = TensorT<double>({n, d});
    b.text_features = TensorT<double>({n * m, d});
    b.captions_per_image = m;
    b.temperature = 0.3;
    auto unit_fill = [&](TensorT<double>& t) {
        for (int64_t i = 0; i < t.shape[0]; ++i) {
            double s = 0;
            for (int64_t j = 0; j < d; ++j) {
                t.at(i, j) = rng.normal();
                s += t.at(i, j) * t.at(i, j);
            }
            for (int64_t j = 0; j < d; ++j) t.at(i, j) /= std::sqrt(s);
        }
    };
    unit_fill(b.image_features);
    unit_fill(b.text_features);

    ContrastiveBatch p = b;  // swap images 0 and 2 with caption groups
    for (int64_t j = 0; j < d; ++j) {
        std::swap(p.image_features.at(0, j), p.image_features.at(2, j));
        for (int64_t k = 0; k < m; ++k)
            std::swap(p.text_features.at(k, j), p.text_features.at(2 * m + k, j));
    }
    CHECK(t2v_loss(p) == doctest::Approx(t2v_loss(b)).epsilon(1e-12));
    CHECK(v2t_loss(p) == doctest::Approx(v2t_loss(b)).epsilon(1e-12));
}

TEST_CASE("batch validation") {
    auto bad_tau = uniform_batch(2, 1, 1.0);
    bad_tau.temperature = 0.0;
    CHECK_THROWS_AS((void)t2v_loss(bad_tau), ContractError);
    auto not_unit = uniform_batch(2, 1, 1.0);
    not_unit.image_features.at(0, 0) = 2.0;
    CHECK_THROWS_AS((void)t2v_loss(not_unit), LossError);
}

TEST_CASE("ifd loss basics") {
    CHECK(ifd_loss(matched_pair(3, 4, 500.0)) == doctest::Approx(0.0));

    // single sample, residual [1, 0], alpha 500 -> 500
    DistillPair p;
    p.teacher = TensorT<double>({1, 2});
    p.teacher.at(0, 0) = 1.0;
    p.student = TensorT<double>({1, 2}, 0.0);
    p.transform_w = TensorT<double>({2, 2}, 0.0);
    p.transform_b = TensorT<double>({2}, 0.0);
    p.alpha = 500.0;
    CHECK(ifd_loss(p) == doctest::Approx(500.0));

    // exact linearity in alpha
    Rng rng(9);
    DistillPair q;
    q.teacher = TensorT<double>({4, 3});
    q.student = TensorT<double>({4, 5});
    q.transform_w = TensorT<double>({5, 3});
    q.transform_b = TensorT<double>({3});
    for (auto* t : {&q.teacher, &q.student, &q.transform_w, &q.transform_b})
        for (auto& v : t->data) v = rng.normal();
    q.alpha = 1.0;
    const double base = ifd_loss(q);
    q.alpha = 2.0;
    CHECK(ifd_loss(q) == doctest::Approx(2.0 * base).epsilon(1e-15));
    q.alpha = 7.25;
    CHECK(ifd_loss(q) == doctest::Approx(7.25 * base).epsilon(1e-15));
}

TEST_CASE("ifd is invariant to translating teacher and transform output together") {
    Rng rng(10);
    DistillPair p;
    p.teacher = TensorT<double>({3, 4});
    p.student = TensorT<double>({3, 4});
    p.transform_w = TensorT<double>({4, 4});
    p.transform_b = TensorT<double>({4});
    for (auto* t : {&p.teacher, &p.student, &p.transform_w, &p.transform_b})
        for (auto& v : t->data) v = rng.normal();
    p.alpha = 3.0;
    const double before = ifd_loss(p);
    for (int64_t i = 0; i < 3; ++i) p.teacher.at(i, 2) += 5.0;
    p.transform_b.data[2] += 5.0;  // shifts T(F^s) by the same constant
    CHECK(ifd_loss(p) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("ifd pair averages the two towers") {
    const auto zero = matched_pair(2, 3, 1.0);
    DistillPair two = matched_pair(2, 3, 1.0);
    two.transform_b = TensorT<double>({3}, 0.0);  // residual 0.5 per coord
    const double x = ifd_loss(two);
    CHECK(ifd_pair_loss(two, zero) == doctest::Approx(0.5 * x));
    CHECK(ifd_pair_loss(zero, zero) == doctest::Approx(0.0));
}

TEST_CASE("total loss is the plain sum") {
    CHECK(total_loss(0.5, 0.05) == doctest::Approx(0.55));
    CHECK(total_loss(1.25, 0.0) == doctest::Approx(1.25));
}

TEST_CASE("loss breakdown identities hold as computed") {
    const auto b = identity_batch(0.5);
    LossBreakdown lb;
    lb.l_t2v = t2v_loss(b);
    lb.l_v2t = v2t_loss(b);
    lb.l_task = task_loss(b);
    lb.l_ifd_image = ifd_loss(matched_pair(2, 3, 5.0));
    lb.l_ifd_text = 2.0 * ifd_loss(matched_pair(2, 3, 5.0));
    lb.l_ifd_pair = 0.5 * (lb.l_ifd_image + lb.l_ifd_text);
    lb.l_total = total_loss(lb.l_task, lb.l_ifd_pair);
    CHECK(lb.l_task == 0.5 * (lb.l_t2v + lb.l_v2t));
    CHECK(lb.l_total == lb.l_task + lb.l_ifd_pair);
    CHECK(lb.l_t2v >= 0);
    CHECK(lb.l_v2t >= 0);
    CHECK(lb.l_ifd_pair >= 0);
}

TEST_CASE("calibrate_alpha arithmetic and errors") {
    CHECK(calibrate_alpha(2.0, 0.004, 0.1) == doctest::Approx(50.0));
    CHECK(calibrate_alpha(1.0, 0.5, 0.0) == 0.0);
    CHECK_THROWS_AS((void)calibrate_alpha(2.0, 0.0, 0.1), LossError);
    CHECK_THROWS_AS((void)calibrate_alpha(2.0, 1e-13, 0.1), LossError);
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(77);
    const int64_t n = 3, m = 2, d = 5;

    SUBCASE("task loss w.r.t. raw features and logit scale") {
        TensorT<double> v({n, d}), t({n * m, d}), s({1, 1});
        for (auto& x : v.data) x = rng.normal();
        for (auto& x : t.data) x = rng.normal();
        s.data[0] = 0.4;
        const double err = grad_check({v, t, s}, [&](Graph<double>& g,
                                                     const std::vector<int>& ids) {
            return build_task_loss(g, ids[0], ids[1], m, ops::exp_clamped(g, ids[2], 100.0)).task;
        });
        CHECK(err <= 1e-4);
    }

    SUBCASE("ifd loss w.r.t. student features and transform") {
        TensorT<double> ft({n, 3}), fs({n, d}), w({d, 3}), bias({3});
        for (auto* x : {&ft, &fs, &w, &bias})
            for (auto& e : x->data) e = rng.normal();
        const double err =
            grad_check({ft, fs, w, bias}, [&](Graph<double>& g, const std::vector<int>& ids) {
                return build_ifd_loss(g, ids[0], ids[1], ids[2], ids[3], 2.5);
            });
        CHECK(err <= 1e-4);
    }
}
