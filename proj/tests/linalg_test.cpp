#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eclab/matrix.hpp"
#include "eclab/power_iteration.hpp"
#include "eclab/rng.hpp"
#include "eclab/svd.hpp"

using namespace eclab;

namespace {

// Independent oracle: naive triple loop, (i,j,k) order.
Matrix matmul_naive(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

TEST(Matmul, IdentityCase) {
    Rng rng(1);
    Matrix m = rng.normal_matrix(3, 5);
    Matrix out = matmul(Matrix::identity(3), m);
    EXPECT_EQ(max_abs_diff(out, m), 0.0);
}

TEST(Matmul, HandChecked2x2) {
    Matrix a{{1, 2}, {3, 4}};
    Matrix b{{0}, {1}};
    Matrix c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(c(1, 0), 4.0);
}

TEST(Matmul, MatchesNaiveOracle) {
    Rng rng(7);
    Matrix a = rng.normal_matrix(8, 8);
    Matrix b = rng.normal_matrix(8, 8);
    EXPECT_LE(max_abs_diff(matmul(a, b), matmul_naive(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
    Matrix a(2, 3), b(4, 2);
    EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Svd, DiagonalMatrix) {
    Matrix m{{3, 0}, {0, 1}};
    SvdResult r = svd(m);
    ASSERT_EQ(r.singular_values.size(), 2u);
    EXPECT_NEAR(r.singular_values[0], 3.0, 1e-12);
    EXPECT_NEAR(r.singular_values[1], 1.0, 1e-12);
}

TEST(Svd, ZeroMatrix) {
    SvdResult r = svd(Matrix(4, 3));
    for (double s : r.singular_values) EXPECT_EQ(s, 0.0);
}

TEST(Svd, TopSigmaMatchesSymmetricEigenOracle) {
    Rng rng(11);
    Matrix m = rng.normal_matrix(16, 32);
    const double top = sigma_svd(m);
    // Independent route: largest eigenvalue of M M^T via Jacobi eigen.
    Matrix mmt = matmul(m, transpose(m));
    SymmetricEigenResult e = symmetric_eigen(mmt);
    EXPECT_NEAR(top * top, e.eigenvalues.front(), 1e-9 * e.eigenvalues.front());
}

TEST(Svd, ReconstructionUpTo256) {
    Rng rng(13);
    for (auto [r, c] : {std::pair<int, int>{32, 17}, {64, 64}, {40, 256}, {256, 60}}) {
        Matrix m = rng.normal_matrix(r, c);
        SvdResult s = svd(m);
        Matrix d(s.singular_values.size(), s.singular_values.size());
        for (std::size_t i = 0; i < s.singular_values.size(); ++i) d(i, i) = s.singular_values[i];
        Matrix rec = matmul(matmul(s.left_vectors, d), transpose(s.right_vectors));
        Matrix diff = add(rec, scale(m, -1.0));
        EXPECT_LE(diff.frobenius_norm() / m.frobenius_norm(), 1e-10)
            << "shape " << r << "x" << c;
        EXPECT_TRUE(std::is_sorted(s.singular_values.begin(), s.singular_values.end(),
                                   std::greater<double>()));
        for (double sv : s.singular_values) EXPECT_GE(sv, 0.0);
    }
}

TEST(Svd, FrobeniusSandwich) {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix m = rng.normal_matrix(12, 9);
        const double fro = m.frobenius_norm();
        const double top = sigma_svd(m);
        EXPECT_LE(fro / std::sqrt(9.0) - 1e-12, top);
        EXPECT_LE(top, fro + 1e-12);
    }
}

TEST(PowerIteration, AlignedDiagonalOneStep) {
    Matrix w{{5, 0}, {0, 2}};
    std::vector<double> e1 = {1.0, 0.0};
    PowerStepResult r = power_iteration_step(w, e1, e1);
    EXPECT_NEAR(r.sigma, 5.0, 1e-12);
}

TEST(PowerIteration, ZeroMatrixGuard) {
    Matrix w(3, 4);
    Rng rng(3);
    std::vector<double> u = rng.unit_vector(3), v = rng.unit_vector(4);
    PowerStepResult r = power_iteration_step(w, u, v);
    EXPECT_EQ(r.sigma, 0.0);
    EXPECT_EQ(r.u, u);  // zero guard keeps previous estimates
    EXPECT_EQ(r.v, v);
}

TEST(PowerIteration, ConvergesToSvdOracle) {
    Rng rng(19);
    Matrix w = rng.normal_matrix(64, 64);
    const double oracle = sigma_svd(w);
    std::vector<double> u = rng.unit_vector(64), v = rng.unit_vector(64);
    double sigma = 0.0, prev = -1.0;
    for (int s = 0; s < 100; ++s) {
        PowerStepResult r = power_iteration_step(w, std::move(u), std::move(v));
        u = std::move(r.u);
        v = std::move(r.v);
        sigma = r.sigma;
        EXPECT_GE(sigma, prev - 1e-12);  // monotone within slack
        EXPECT_LE(sigma, oracle + 1e-9);
        prev = sigma;
    }
    EXPECT_LE(std::fabs(sigma - oracle) / oracle, 1e-6);
}

TEST(SpectralNormConverged, KnownCases) {
    Matrix d{{7, 0, 0}, {0, 1, 0}, {0, 0, 0.5}};
    SpectralNormResult r = spectral_norm_converged(d, 1e-10, 500);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.sigma, 7.0, 1e-8);

    // rank-1 outer product: sigma = |x| * |y|
    Rng rng(23);
    std::vector<double> x(6), y(4);
    for (double& t : x) t = rng.normal();
    for (double& t : y) t = rng.normal();
    Matrix outer(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) outer(i, j) = x[i] * y[j];
    SpectralNormResult r1 = spectral_norm_converged(outer, 1e-12, 500);
    EXPECT_NEAR(r1.sigma, norm2(x) * norm2(y), 1e-9 * norm2(x) * norm2(y));
}

TEST(SpectralNormConverged, LargeRandomMatchesOracle) {
    Rng rng(29);
    Matrix w = rng.normal_matrix(128, 512);
    SpectralNormResult r = spectral_norm_converged(w, 1e-12, 2000);
    const double oracle = sigma_svd(w);
    EXPECT_LE(std::fabs(r.sigma - oracle) / oracle, 1e-6);
}

TEST(Serialization, RoundTripAndFormat) {
    Rng rng(31);
    Matrix m = rng.normal_matrix(5, 3);
    std::stringstream ss;
    write_matrix(ss, m);
    const std::string bytes = ss.str();
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(bytes.substr(0, 4), "ECLM");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 5u);  // little-endian u32 rows
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3u);
    EXPECT_EQ(bytes.size(), 12u + 15u * 8u);

    Matrix back = read_matrix(ss);
    EXPECT_EQ(back.rows(), m.rows());
    EXPECT_EQ(back.cols(), m.cols());
    EXPECT_EQ(back.data(), m.data());
}

TEST(Serialization, BadMagicThrows) {
    std::stringstream ss(std::string("XXXX\0\0\0\0", 8));
    EXPECT_THROW(read_matrix(ss), IoError);
}

TEST(SeedDerivation, StreamsAreDistinctAndStable) {
    const std::uint64_t master = 42;
    EXPECT_EQ(derive_seed(master, SeedStream::Data), derive_seed(master, SeedStream::Data));
    EXPECT_NE(derive_seed(master, SeedStream::Data), derive_seed(master, SeedStream::Init));
    EXPECT_NE(derive_seed(master, SeedStream::Init), derive_seed(master, SeedStream::Oracle));
    EXPECT_NE(derive_seed(1, SeedStream::Data), derive_seed(2, SeedStream::Data));
}
