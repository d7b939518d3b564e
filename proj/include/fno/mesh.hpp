#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace fno {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

struct Tri {
  std::array<int, 3> v{};
};

/// Analytic curve descriptions used for boundary sampling, hole carving and
/// interface bookkeeping.
struct Circle { Vec2 c; double r = 0; };
struct SquareCurve { Vec2 c; double side = 0; };
struct RectCurve { Vec2 c; double w = 0, h = 0; };
struct ArcCurve { Vec2 c; double r = 0, th0 = 0, th1 = 0; };
struct SegmentCurve { Vec2 a, b; };
using CurveSpec = std::variant<Circle, SquareCurve, RectCurve, ArcCurve, SegmentCurve>;

/// True for curves without endpoints (circle, square, rect).
bool curve_closed(const CurveSpec& spec);
/// Total arc length of the curve.
double curve_length(const CurveSpec& spec);
/// Point at arc-length parameter s in [0, length).
Vec2 curve_point(const CurveSpec& spec, double s);
/// Closest point on the curve to p.
Vec2 curve_project(const CurveSpec& spec, const Vec2& p);
/// Unsigned distance from p to the curve.
double curve_distance(const CurveSpec& spec, const Vec2& p);

/// Ordered boundary samples with a name, decoupled from any mesh's nodes.
struct InterfaceCurve {
  std::string tag;
  CurveSpec spec;
  std::vector<Vec2> points;
};

/// Arc-length-uniform sampling. Closed curves get n points with no duplicated
/// endpoint (a square with n divisible by 4 puts samples exactly on corners);
/// open curves include both endpoints.
InterfaceCurve sample_interface(const CurveSpec& spec, int n, const std::string& tag);

/// Rectangle boundary sampled with independent per-edge counts, counter
/// clockwise from the bottom-left corner. Each edge contributes its count with
/// the leading corner included and the trailing one left to the next edge, so
/// the total is 2*(n_lr + n_tb) distinct points.
InterfaceCurve sample_rect_edges(const RectCurve& rect, int n_lr, int n_tb,
                                 const std::string& tag);

/// Triangle mesh with named, ordered boundary-node groups.
struct Mesh {
  std::vector<Vec2> nodes;
  std::vector<Tri> tris;
  std::map<std::string, std::vector<int>> tags;

  double tri_area(int t) const;
  double area() const;
  /// Nodes lying on any edge that belongs to exactly one triangle.
  std::vector<int> boundary_nodes() const;
  /// Mean edge length over all triangle edges.
  double mean_edge_length() const;
};

struct HoleNone {};
using HoleSpec = std::variant<HoleNone, Circle, RectCurve>;

/// Structured grid on a side x side square centered at `center`, each cell
/// split into two counter-clockwise triangles. Tags: left/right/top/bottom.
Mesh build_square(double side, int divisions, Vec2 center = {});

/// Square mesh with an optional hole carved out. Triangles touching the hole
/// are removed, the resulting loop is snapped onto the hole curve and tagged
/// Gamma_I_in. Degenerate post-snap slivers are collapsed.
Mesh build_square_with_hole(double side, int divisions, const HoleSpec& hole,
                            Vec2 center = {});

/// Polar disk mesh: ring i of `rings` carries 6i nodes, so the rim is a
/// 6*rings-gon. Rim tagged Gamma_II_out.
Mesh build_disk(double radius, int rings, Vec2 center = {});

/// Quarter annulus in the first quadrant. Tags: inner/outer arcs, bottom
/// (y=0) and left (x=0) roller edges.
Mesh build_quarter_annulus(double r_in, double r_out, int res);

/// Plain-text mesh serialization; numeric round trip is bit exact.
std::string mesh_to_text(const Mesh& m);
Mesh mesh_from_text(const std::string& text);
void save_mesh(const Mesh& m, const std::string& path);
Mesh load_mesh(const std::string& path);

/// Barycentric point location with a uniform-bin acceleration grid.
class MeshLocator {
 public:
  explicit MeshLocator(const Mesh& mesh);

  struct Hit {
    int tri = -1;
    std::array<double, 3> lambda{};
  };

  /// Containing triangle and barycentric weights; points up to `tol` outside
  /// an element are clamped onto it. Returns nullopt when nothing is close.
  std::optional<Hit> locate(const Vec2& p, double tol = 1e-8) const;

  /// Interpolate per-node scalar values at p. Throws if p is outside.
  double interpolate(const std::vector<double>& nodal, const Vec2& p) const;

 private:
  const Mesh& mesh_;
  Vec2 lo_, hi_;
  double cell_ = 0;
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<int>> bins_;
};

}  // namespace fno
