#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "fno/mesh.hpp"

using namespace fno;

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_positive_areas(const Mesh& m) {
  for (int t = 0; t < (int)m.tris.size(); ++t) CHECK(m.tri_area(t) > 0.0);
}

void check_tag_gaps(const Mesh& m) {
  double limit = 3.0 * m.mean_edge_length();
  for (const auto& [name, tag] : m.tags) {
    for (size_t i = 0; i + 1 < tag.size(); ++i) {
      double gap = (m.nodes[tag[i + 1]] - m.nodes[tag[i]]).norm();
      CHECK(gap <= limit);
    }
  }
}

bool meshes_bit_equal(const Mesh& a, const Mesh& b) {
  if (a.nodes.size() != b.nodes.size() || a.tris.size() != b.tris.size()) return false;
  if (std::memcmp(a.nodes.data(), b.nodes.data(), a.nodes.size() * sizeof(Vec2)) != 0)
    return false;
  for (size_t i = 0; i < a.tris.size(); ++i)
    if (a.tris[i].v != b.tris[i].v) return false;
  return a.tags == b.tags;
}

}  // namespace

TEST_CASE("structured square: counts, area, tags") {
  Mesh m = build_square(2.0, 8);
  CHECK(m.tris.size() == 128);
  CHECK(m.nodes.size() == 81);
  CHECK(m.area() == doctest::Approx(4.0).epsilon(1e-12));
  for (const char* name : {"top", "bottom", "left", "right"})
    CHECK(m.tags.at(name).size() == 9);
  check_positive_areas(m);
  check_tag_gaps(m);
}

TEST_CASE("square with circular hole: loop snapped onto the circle") {
  Mesh m = build_square_with_hole(2.0, 40, Circle{{0, 0}, 0.3});
  check_positive_areas(m);
  check_tag_gaps(m);
  const auto& loop = m.tags.at("Gamma_I_in");
  CHECK(loop.size() >= 16);
  for (int v : loop) {
    double r2 = m.nodes[v].x * m.nodes[v].x + m.nodes[v].y * m.nodes[v].y;
    CHECK(std::abs(r2 - 0.09) < 1e-6 * 0.09);
  }
  double exact = 4.0 - kPi * 0.09;
  CHECK(std::abs(m.area() - exact) / exact < 0.01);

  Mesh finer = build_square_with_hole(2.0, 80, Circle{{0, 0}, 0.3});
  CHECK(std::abs(finer.area() - exact) < std::abs(m.area() - exact));
}

TEST_CASE("square with rectangular hole: exact carved area") {
  Mesh m = build_square_with_hole(2.0, 40, RectCurve{{0, 0}, 0.6, 0.6});
  check_positive_areas(m);
  check_tag_gaps(m);
  CHECK(std::abs(m.area() - (4.0 - 0.36)) < 1e-6);
  for (int v : m.tags.at("Gamma_I_in")) {
    double dx = std::abs(m.nodes[v].x), dy = std::abs(m.nodes[v].y);
    CHECK(std::max(dx, dy) == doctest::Approx(0.3).epsilon(1e-9));
  }
}

TEST_CASE("square with tall rectangular hole (expansion geometry)") {
  Mesh m = build_square_with_hole(2.0, 32, RectCurve{{0, 0}, 0.6, 1.25});
  check_positive_areas(m);
  check_tag_gaps(m);
  double exact = 4.0 - 0.6 * 1.25;
  CHECK(std::abs(m.area() - exact) / exact < 0.01);
}

TEST_CASE("disk: area ratio and rim radius") {
  Mesh m = build_disk(0.35, 16);
  check_positive_areas(m);
  check_tag_gaps(m);
  double exact = kPi * 0.35 * 0.35;
  CHECK(m.area() <= exact);
  CHECK(m.area() >= 0.995 * exact);

  Mesh coarse = build_disk(1.0, 2);
  for (int v : coarse.tags.at("Gamma_II_out"))
    CHECK(coarse.nodes[v].norm() == doctest::Approx(1.0).epsilon(1e-9));
  check_positive_areas(coarse);
}

TEST_CASE("quarter annulus: area, arc radii, thin stress case") {
  Mesh m = build_quarter_annulus(1.8, 4.0, 24);
  check_positive_areas(m);
  check_tag_gaps(m);
  double exact = kPi * (16.0 - 3.24) / 4.0;
  CHECK(std::abs(m.area() - exact) / exact < 0.01);

  Mesh inner = build_quarter_annulus(1.0, 2.0, 24);
  for (int v : inner.tags.at("inner"))
    CHECK(inner.nodes[v].norm() == doctest::Approx(1.0).epsilon(1e-9));
  for (int v : inner.tags.at("bottom")) CHECK(std::abs(inner.nodes[v].y) < 1e-12);
  for (int v : inner.tags.at("left")) CHECK(std::abs(inner.nodes[v].x) < 1e-9);

  Mesh thin = build_quarter_annulus(1.0, 1.0 + 1e-3, 4);
  check_positive_areas(thin);
}

TEST_CASE("interface sampling: circle spacing, square corners, per-edge counts") {
  InterfaceCurve circ = sample_interface(Circle{{0, 0}, 0.35}, 200, "Gamma_II_out");
  CHECK(circ.points.size() == 200);
  double chord0 = (circ.points[1] - circ.points[0]).norm();
  for (size_t i = 0; i < circ.points.size(); ++i) {
    double chord = (circ.points[(i + 1) % 200] - circ.points[i]).norm();
    CHECK(std::abs(chord - chord0) < 1e-9);
  }

  InterfaceCurve sq4 = sample_interface(SquareCurve{{0, 0}, 0.7}, 4, "corners");
  CHECK(sq4.points.size() == 4);
  for (const Vec2& p : sq4.points) {
    CHECK(std::abs(p.x) == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(std::abs(p.y) == doctest::Approx(0.35).epsilon(1e-12));
  }

  InterfaceCurve sq = sample_interface(SquareCurve{{0, 0}, 0.7}, 328, "Gamma_II_out");
  CHECK(sq.points.size() == 328);
  int on_bottom = 0;
  for (const Vec2& p : sq.points)
    if (std::abs(p.y + 0.35) < 1e-12 && p.x < 0.35 - 1e-12) ++on_bottom;
  CHECK(on_bottom == 82);

  InterfaceCurve rect = sample_rect_edges(RectCurve{{0, 0}, 0.7, 1.35}, 40, 20, "Gamma_inner_out");
  CHECK(rect.points.size() == 2 * (40 + 20));
  std::set<std::pair<double, double>> uniq;
  for (const Vec2& p : rect.points) uniq.insert({p.x, p.y});
  CHECK(uniq.size() == rect.points.size());
}

TEST_CASE("arc and segment sampling include endpoints") {
  InterfaceCurve arc = sample_interface(ArcCurve{{0, 0}, 2.0, 0.0, kPi / 2}, 100, "outer");
  CHECK(arc.points.size() == 100);
  CHECK(arc.points.front().x == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(arc.points.back().y == doctest::Approx(2.0).epsilon(1e-12));
  for (const Vec2& p : arc.points) CHECK(p.norm() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("mesh build is deterministic") {
  Mesh a = build_square_with_hole(2.0, 20, Circle{{0, 0}, 0.3});
  Mesh b = build_square_with_hole(2.0, 20, Circle{{0, 0}, 0.3});
  CHECK(meshes_bit_equal(a, b));
}

TEST_CASE("text round trip is bit exact") {
  for (const Mesh& m : {build_square_with_hole(2.0, 20, Circle{{0, 0}, 0.3}),
                        build_disk(0.35, 8), build_quarter_annulus(1.0, 2.0, 6)}) {
    Mesh back = mesh_from_text(mesh_to_text(m));
    CHECK(meshes_bit_equal(m, back));
    Mesh back2 = mesh_from_text(mesh_to_text(back));
    CHECK(meshes_bit_equal(back, back2));
  }
}

TEST_CASE("locator reproduces linear fields exactly") {
  Mesh m = build_square_with_hole(2.0, 24, Circle{{0, 0}, 0.3});
  MeshLocator loc(m);
  std::vector<double> f(m.nodes.size());
  for (size_t i = 0; i < m.nodes.size(); ++i) f[i] = 2.0 * m.nodes[i].x - m.nodes[i].y + 0.5;
  unsigned state = 12345;
  auto next01 = [&state]() {
    state = state * 1664525u + 1013904223u;
    return (state >> 8) / double(1 << 24);
  };
  int probes = 0;
  while (probes < 200) {
    Vec2 p{-1.0 + 2.0 * next01(), -1.0 + 2.0 * next01()};
    if (p.norm() < 0.32) continue;
    auto hit = loc.locate(p);
    REQUIRE(hit.has_value());
    CHECK(loc.interpolate(f, p) == doctest::Approx(2.0 * p.x - p.y + 0.5).epsilon(1e-12));
    ++probes;
  }
  InterfaceCurve rim = sample_interface(Circle{{0, 0}, 0.35}, 200, "trace");
  for (const Vec2& p : rim.points) CHECK(loc.locate(p).has_value());
}

TEST_CASE("rejected geometries throw") {
  CHECK_THROWS(build_square_with_hole(2.0, 16, Circle{{0, 0}, 1.2}));
  CHECK_THROWS(build_square_with_hole(2.0, 4, HoleNone{}));
  CHECK_THROWS(build_quarter_annulus(2.0, 1.0, 8));
  CHECK_THROWS(sample_interface(Circle{{0, 0}, 1.0}, 3, "x"));
}
