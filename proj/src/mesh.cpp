#include "fno/mesh.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "fno/ioutil.hpp"

namespace fno {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

std::array<Vec2, 4> rect_corners(const Vec2& c, double w, double h) {
  return {Vec2{c.x - w / 2, c.y - h / 2}, Vec2{c.x + w / 2, c.y - h / 2},
          Vec2{c.x + w / 2, c.y + h / 2}, Vec2{c.x - w / 2, c.y + h / 2}};
}

Vec2 segment_project(const Vec2& a, const Vec2& b, const Vec2& p) {
  Vec2 d = b - a;
  double len2 = d.dot(d);
  if (len2 == 0) return a;
  double t = clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return a + d * t;
}

Vec2 rect_point(const Vec2& c, double w, double h, double s) {
  auto k = rect_corners(c, w, h);
  double lens[4] = {w, h, w, h};
  for (int e = 0; e < 4; ++e) {
    if (s <= lens[e] || e == 3) {
      Vec2 d = k[(e + 1) % 4] - k[e];
      double t = lens[e] > 0 ? clamp(s / lens[e], 0.0, 1.0) : 0.0;
      return k[e] + d * t;
    }
    s -= lens[e];
  }
  return k[0];
}

Vec2 rect_project(const Vec2& c, double w, double h, const Vec2& p) {
  auto k = rect_corners(c, w, h);
  Vec2 best = k[0];
  double bd = (p - best).norm();
  for (int e = 0; e < 4; ++e) {
    Vec2 q = segment_project(k[e], k[(e + 1) % 4], p);
    double d = (p - q).norm();
    if (d < bd) { bd = d; best = q; }
  }
  return best;
}

}  // namespace

bool curve_closed(const CurveSpec& spec) {
  return !std::holds_alternative<ArcCurve>(spec) && !std::holds_alternative<SegmentCurve>(spec);
}

double curve_length(const CurveSpec& spec) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Circle>) return 2 * kPi * s.r;
        else if constexpr (std::is_same_v<T, SquareCurve>) return 4 * s.side;
        else if constexpr (std::is_same_v<T, RectCurve>) return 2 * (s.w + s.h);
        else if constexpr (std::is_same_v<T, ArcCurve>) return s.r * (s.th1 - s.th0);
        else return (s.b - s.a).norm();
      },
      spec);
}

Vec2 curve_point(const CurveSpec& spec, double s) {
  return std::visit(
      [s](const auto& c) -> Vec2 {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Circle>) {
          double th = s / c.r;
          return {c.c.x + c.r * std::cos(th), c.c.y + c.r * std::sin(th)};
        } else if constexpr (std::is_same_v<T, SquareCurve>) {
          return rect_point(c.c, c.side, c.side, s);
        } else if constexpr (std::is_same_v<T, RectCurve>) {
          return rect_point(c.c, c.w, c.h, s);
        } else if constexpr (std::is_same_v<T, ArcCurve>) {
          double th = c.th0 + s / c.r;
          return {c.c.x + c.r * std::cos(th), c.c.y + c.r * std::sin(th)};
        } else {
          double len = (c.b - c.a).norm();
          double t = len > 0 ? s / len : 0.0;
          return c.a + (c.b - c.a) * t;
        }
      },
      spec);
}

Vec2 curve_project(const CurveSpec& spec, const Vec2& p) {
  return std::visit(
      [&p](const auto& c) -> Vec2 {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Circle>) {
          Vec2 d = p - c.c;
          double n = d.norm();
          if (n == 0) return {c.c.x + c.r, c.c.y};
          return c.c + d * (c.r / n);
        } else if constexpr (std::is_same_v<T, SquareCurve>) {
          return rect_project(c.c, c.side, c.side, p);
        } else if constexpr (std::is_same_v<T, RectCurve>) {
          return rect_project(c.c, c.w, c.h, p);
        } else if constexpr (std::is_same_v<T, ArcCurve>) {
          Vec2 d = p - c.c;
          double th = std::atan2(d.y, d.x);
          while (th < c.th0) th += 2 * kPi;
          if (th > c.th1) {
            double over = th - c.th1;
            double under = c.th0 + 2 * kPi - th;
            th = over < under ? c.th1 : c.th0;
          }
          return {c.c.x + c.r * std::cos(th), c.c.y + c.r * std::sin(th)};
        } else {
          return segment_project(c.a, c.b, p);
        }
      },
      spec);
}

double curve_distance(const CurveSpec& spec, const Vec2& p) {
  return (p - curve_project(spec, p)).norm();
}

InterfaceCurve sample_interface(const CurveSpec& spec, int n, const std::string& tag) {
  if (n < 4) throw std::invalid_argument("sample_interface: n >= 4 required");
  InterfaceCurve curve;
  curve.tag = tag;
  curve.spec = spec;
  double len = curve_length(spec);
  bool closed = curve_closed(spec);
  curve.points.reserve(n);
  for (int i = 0; i < n; ++i) {
    double s = closed ? len * i / n : len * i / (n - 1);
    curve.points.push_back(curve_point(spec, s));
  }
  return curve;
}

InterfaceCurve sample_rect_edges(const RectCurve& rect, int n_lr, int n_tb,
                                 const std::string& tag) {
  if (n_lr < 2 || n_tb < 2) throw std::invalid_argument("sample_rect_edges: counts >= 2");
  InterfaceCurve curve;
  curve.tag = tag;
  curve.spec = rect;
  auto k = rect_corners(rect.c, rect.w, rect.h);
  auto emit_edge = [&](const Vec2& a, const Vec2& b, int n) {
    for (int i = 0; i < n; ++i) curve.points.push_back(a + (b - a) * (double(i) / n));
  };
  emit_edge(k[0], k[1], n_tb);
  emit_edge(k[1], k[2], n_lr);
  emit_edge(k[2], k[3], n_tb);
  emit_edge(k[3], k[0], n_lr);
  return curve;
}

double Mesh::tri_area(int t) const {
  const Tri& tr = tris[t];
  Vec2 a = nodes[tr.v[0]], b = nodes[tr.v[1]], c = nodes[tr.v[2]];
  return 0.5 * (b - a).cross(c - a);
}

double Mesh::area() const {
  double s = 0;
  for (int t = 0; t < (int)tris.size(); ++t) s += tri_area(t);
  return s;
}

namespace {

int64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (int64_t)a << 32 | (uint32_t)b;
}

std::unordered_map<int64_t, int> edge_use_counts(const Mesh& m) {
  std::unordered_map<int64_t, int> counts;
  counts.reserve(m.tris.size() * 3);
  for (const Tri& t : m.tris)
    for (int e = 0; e < 3; ++e) counts[edge_key(t.v[e], t.v[(e + 1) % 3])]++;
  return counts;
}

}  // namespace

std::vector<int> Mesh::boundary_nodes() const {
  auto counts = edge_use_counts(*this);
  std::vector<char> on(nodes.size(), 0);
  for (const auto& [key, cnt] : counts) {
    if (cnt == 1) {
      on[key >> 32] = 1;
      on[(uint32_t)key] = 1;
    }
  }
  std::vector<int> out;
  for (int i = 0; i < (int)nodes.size(); ++i)
    if (on[i]) out.push_back(i);
  return out;
}

double Mesh::mean_edge_length() const {
  double sum = 0;
  int n = 0;
  for (const Tri& t : tris)
    for (int e = 0; e < 3; ++e) {
      sum += (nodes[t.v[e]] - nodes[t.v[(e + 1) % 3]]).norm();
      ++n;
    }
  return n ? sum / n : 0.0;
}

Mesh build_square(double side, int divisions, Vec2 center) {
  if (divisions < 1) throw std::invalid_argument("build_square: divisions >= 1");
  Mesh m;
  int n = divisions + 1;
  double h = side / divisions;
  double x0 = center.x - side / 2, y0 = center.y - side / 2;
  m.nodes.reserve((size_t)n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m.nodes.push_back({x0 + j * h, y0 + i * h});
  auto id = [n](int i, int j) { return i * n + j; };
  for (int i = 0; i < divisions; ++i)
    for (int j = 0; j < divisions; ++j) {
      int v00 = id(i, j), v10 = id(i, j + 1), v01 = id(i + 1, j), v11 = id(i + 1, j + 1);
      m.tris.push_back({{v00, v10, v11}});
      m.tris.push_back({{v00, v11, v01}});
    }
  auto& bottom = m.tags["bottom"];
  auto& top = m.tags["top"];
  auto& left = m.tags["left"];
  auto& right = m.tags["right"];
  for (int j = 0; j < n; ++j) bottom.push_back(id(0, j));
  for (int j = 0; j < n; ++j) top.push_back(id(divisions, j));
  for (int i = 0; i < n; ++i) left.push_back(id(i, 0));
  for (int i = 0; i < n; ++i) right.push_back(id(i, divisions));
  return m;
}

namespace {

struct HoleOps {
  bool active = false;
  CurveSpec curve;
  double scale = 0;

  bool inside(const Vec2& p) const {
    if (!active) return false;
    if (const Circle* c = std::get_if<Circle>(&curve))
      return (p - c->c).norm() < c->r * (1 - 1e-12);
    const RectCurve& r = std::get<RectCurve>(curve);
    double tol = 1e-12 * scale;
    return std::abs(p.x - r.c.x) < r.w / 2 - tol && std::abs(p.y - r.c.y) < r.h / 2 - tol;
  }
};

/// Removes triangles touching the hole, snaps the exposed loop onto the hole
/// curve, drops inverted/degenerate slivers, compacts nodes, and rebuilds the
/// Gamma_I_in tag by walking the loop.
void carve_hole(Mesh& m, const HoleOps& hole, double side, Vec2 center) {
  std::vector<char> node_inside(m.nodes.size(), 0);
  for (size_t i = 0; i < m.nodes.size(); ++i) node_inside[i] = hole.inside(m.nodes[i]);

  std::vector<Tri> kept;
  kept.reserve(m.tris.size());
  for (const Tri& t : m.tris) {
    if (node_inside[t.v[0]] || node_inside[t.v[1]] || node_inside[t.v[2]]) continue;
    Vec2 centroid = (m.nodes[t.v[0]] + m.nodes[t.v[1]] + m.nodes[t.v[2]]) * (1.0 / 3.0);
    if (hole.inside(centroid)) continue;
    kept.push_back(t);
  }
  m.tris = std::move(kept);

  double outer_tol = 1e-9 * side;
  auto on_outer = [&](const Vec2& p) {
    return std::abs(std::abs(p.x - center.x) - side / 2) < outer_tol ||
           std::abs(std::abs(p.y - center.y) - side / 2) < outer_tol;
  };

  auto snap_loop = [&]() {
    auto counts = edge_use_counts(m);
    std::vector<char> on_loop(m.nodes.size(), 0);
    for (const auto& [key, cnt] : counts) {
      if (cnt != 1) continue;
      int a = key >> 32, b = (uint32_t)key;
      if (on_outer(m.nodes[a]) && on_outer(m.nodes[b])) continue;
      on_loop[a] = on_loop[b] = 1;
    }
    for (size_t i = 0; i < m.nodes.size(); ++i)
      if (on_loop[i]) m.nodes[i] = curve_project(hole.curve, m.nodes[i]);
    return on_loop;
  };
  std::vector<char> on_loop = snap_loop();

  double h = side / std::sqrt((double)m.tris.size() / 2);
  double tiny = 1e-9 * h * h;
  std::vector<Tri> valid;
  valid.reserve(m.tris.size());
  for (const Tri& t : m.tris) {
    Vec2 a = m.nodes[t.v[0]], b = m.nodes[t.v[1]], c = m.nodes[t.v[2]];
    double area2 = (b - a).cross(c - a);
    if (area2 > tiny) {
      valid.push_back(t);
      continue;
    }
    bool all_on_curve = on_loop[t.v[0]] && on_loop[t.v[1]] && on_loop[t.v[2]];
    if (!all_on_curve)
      throw std::runtime_error("carve_hole: degenerate triangle off the hole curve");
  }
  m.tris = std::move(valid);

  // compact node numbering
  std::vector<int> remap(m.nodes.size(), -1);
  std::vector<Vec2> packed;
  for (Tri& t : m.tris)
    for (int e = 0; e < 3; ++e) {
      int& v = t.v[e];
      if (remap[v] < 0) {
        remap[v] = (int)packed.size();
        packed.push_back(m.nodes[v]);
      }
      v = remap[v];
    }
  m.nodes = std::move(packed);
  for (auto& [name, tag] : m.tags) {
    std::vector<int> kept_tag;
    for (int v : tag)
      if (remap[v] >= 0) kept_tag.push_back(remap[v]);
    tag = std::move(kept_tag);
  }

  // walk the final hole loop into an ordered tag
  auto counts = edge_use_counts(m);
  std::unordered_map<int, std::vector<int>> adj;
  for (const auto& [key, cnt] : counts) {
    if (cnt != 1) continue;
    int a = key >> 32, b = (uint32_t)key;
    if (on_outer(m.nodes[a]) && on_outer(m.nodes[b])) continue;
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  if (adj.empty()) return;
  int start = adj.begin()->first;
  for (const auto& [v, nb] : adj) start = std::min(start, v);
  std::vector<int> loop{start};
  int prev = -1, cur = start;
  while (true) {
    const auto& nb = adj.at(cur);
    int next = (nb.size() > 1 && nb[0] == prev) ? nb[1] : nb[0];
    if (next == start) break;
    loop.push_back(next);
    prev = cur;
    cur = next;
    if (loop.size() > adj.size()) throw std::runtime_error("carve_hole: open hole loop");
  }
  m.tags["Gamma_I_in"] = std::move(loop);
}

}  // namespace

Mesh build_square_with_hole(double side, int divisions, const HoleSpec& hole, Vec2 center) {
  if (divisions < 8) throw std::invalid_argument("build_square_with_hole: divisions >= 8");
  Mesh m = build_square(side, divisions, center);
  HoleOps ops;
  ops.scale = side;
  if (const Circle* c = std::get_if<Circle>(&hole)) {
    if ((c->c - center).norm() + c->r >= side / 2)
      throw std::invalid_argument("hole must fit strictly inside the square");
    ops.active = true;
    ops.curve = *c;
  } else if (const RectCurve* r = std::get_if<RectCurve>(&hole)) {
    if (std::abs(r->c.x - center.x) + r->w / 2 >= side / 2 ||
        std::abs(r->c.y - center.y) + r->h / 2 >= side / 2)
      throw std::invalid_argument("hole must fit strictly inside the square");
    ops.active = true;
    ops.curve = *r;
  }
  if (ops.active) carve_hole(m, ops, side, center);
  return m;
}

Mesh build_disk(double radius, int rings, Vec2 center) {
  if (rings < 2) throw std::invalid_argument("build_disk: rings >= 2");
  Mesh m;
  m.nodes.push_back(center);
  std::vector<std::vector<int>> ring_nodes(rings + 1);
  for (int i = 1; i <= rings; ++i) {
    int cnt = 6 * i;
    double rad = radius * i / rings;
    ring_nodes[i].reserve(cnt);
    for (int k = 0; k < cnt; ++k) {
      double th = 2 * kPi * k / cnt;
      ring_nodes[i].push_back((int)m.nodes.size());
      m.nodes.push_back({center.x + rad * std::cos(th), center.y + rad * std::sin(th)});
    }
  }
  for (int k = 0; k < 6; ++k)
    m.tris.push_back({{0, ring_nodes[1][k], ring_nodes[1][(k + 1) % 6]}});
  for (int i = 2; i <= rings; ++i) {
    const auto& inner = ring_nodes[i - 1];
    const auto& outer = ring_nodes[i];
    int ni = (int)inner.size(), no = (int)outer.size();
    int a = 0, b = 0;
    while (a < no || b < ni) {
      bool advance_outer =
          b == ni || (a < no && (double)(a + 1) / no <= (double)(b + 1) / ni);
      if (advance_outer) {
        m.tris.push_back({{outer[a % no], outer[(a + 1) % no], inner[b % ni]}});
        ++a;
      } else {
        m.tris.push_back({{outer[a % no], inner[(b + 1) % ni], inner[b % ni]}});
        ++b;
      }
    }
  }
  m.tags["Gamma_II_out"] = ring_nodes[rings];
  return m;
}

Mesh build_quarter_annulus(double r_in, double r_out, int res) {
  if (!(0 < r_in && r_in < r_out)) throw std::invalid_argument("build_quarter_annulus: 0 < r_in < r_out");
  if (res < 1) throw std::invalid_argument("build_quarter_annulus: res >= 1");
  double arc = (kPi / 2) * 0.5 * (r_in + r_out);
  int m_ang = std::max(4, (int)std::llround(res * arc / (r_out - r_in)));
  Mesh m;
  int nr = res + 1, na = m_ang + 1;
  m.nodes.reserve((size_t)nr * na);
  for (int i = 0; i < nr; ++i) {
    double rad = r_in + (r_out - r_in) * i / res;
    for (int j = 0; j < na; ++j) {
      double th = (kPi / 2) * j / m_ang;
      m.nodes.push_back({rad * std::cos(th), rad * std::sin(th)});
    }
  }
  auto id = [na](int i, int j) { return i * na + j; };
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < m_ang; ++j) {
      int v00 = id(i, j), v10 = id(i + 1, j), v01 = id(i, j + 1), v11 = id(i + 1, j + 1);
      m.tris.push_back({{v00, v10, v11}});
      m.tris.push_back({{v00, v11, v01}});
    }
  auto& inner = m.tags["inner"];
  auto& outer = m.tags["outer"];
  for (int j = 0; j < na; ++j) inner.push_back(id(0, j));
  for (int j = 0; j < na; ++j) outer.push_back(id(res, j));
  auto& bottom = m.tags["bottom"];
  auto& left = m.tags["left"];
  for (int i = 0; i < nr; ++i) bottom.push_back(id(i, 0));
  for (int i = 0; i < nr; ++i) left.push_back(id(i, m_ang));
  return m;
}

std::string mesh_to_text(const Mesh& m) {
  std::ostringstream out;
  out << "nodes " << m.nodes.size() << " triangles " << m.tris.size() << "\n";
  for (const Vec2& p : m.nodes)
    out << double_to_hex(p.x) << " " << double_to_hex(p.y) << "\n";
  for (const Tri& t : m.tris) out << t.v[0] << " " << t.v[1] << " " << t.v[2] << "\n";
  for (const auto& [name, tag] : m.tags) {
    out << "tag " << name << " count " << tag.size() << "\n";
    for (size_t i = 0; i < tag.size(); ++i) out << tag[i] << (i + 1 < tag.size() ? ' ' : '\n');
    if (tag.empty()) out << "\n";
  }
  return out.str();
}

Mesh mesh_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  Mesh m;
  size_t n_nodes = 0, n_tris = 0;
  if (!(in >> word) || word != "nodes" || !(in >> n_nodes) || !(in >> word) ||
      word != "triangles" || !(in >> n_tris))
    throw std::runtime_error("mesh_from_text: bad header");
  m.nodes.reserve(n_nodes);
  for (size_t i = 0; i < n_nodes; ++i) {
    std::string sx, sy;
    if (!(in >> sx >> sy)) throw std::runtime_error("mesh_from_text: truncated nodes");
    m.nodes.push_back({parse_double(sx), parse_double(sy)});
  }
  m.tris.reserve(n_tris);
  for (size_t i = 0; i < n_tris; ++i) {
    Tri t;
    if (!(in >> t.v[0] >> t.v[1] >> t.v[2]))
      throw std::runtime_error("mesh_from_text: truncated triangles");
    m.tris.push_back(t);
  }
  while (in >> word) {
    if (word != "tag") throw std::runtime_error("mesh_from_text: expected tag block");
    std::string name;
    size_t count = 0;
    if (!(in >> name >> word) || word != "count" || !(in >> count))
      throw std::runtime_error("mesh_from_text: bad tag header");
    auto& tag = m.tags[name];
    tag.resize(count);
    for (size_t i = 0; i < count; ++i)
      if (!(in >> tag[i])) throw std::runtime_error("mesh_from_text: truncated tag");
  }
  return m;
}

void save_mesh(const Mesh& m, const std::string& path) {
  write_text_file(path, mesh_to_text(m));
}

Mesh load_mesh(const std::string& path) { return mesh_from_text(read_text_file(path)); }

MeshLocator::MeshLocator(const Mesh& mesh) : mesh_(mesh) {
  if (mesh.nodes.empty() || mesh.tris.empty())
    throw std::invalid_argument("MeshLocator: empty mesh");
  lo_ = hi_ = mesh.nodes[0];
  for (const Vec2& p : mesh.nodes) {
    lo_.x = std::min(lo_.x, p.x);
    lo_.y = std::min(lo_.y, p.y);
    hi_.x = std::max(hi_.x, p.x);
    hi_.y = std::max(hi_.y, p.y);
  }
  double span = std::max(hi_.x - lo_.x, hi_.y - lo_.y);
  cell_ = std::max(2 * mesh.mean_edge_length(), 1e-12 * std::max(span, 1.0));
  nx_ = std::max(1, (int)((hi_.x - lo_.x) / cell_) + 1);
  ny_ = std::max(1, (int)((hi_.y - lo_.y) / cell_) + 1);
  bins_.resize((size_t)nx_ * ny_);
  for (int t = 0; t < (int)mesh.tris.size(); ++t) {
    Vec2 a = mesh.nodes[mesh.tris[t].v[0]], b = mesh.nodes[mesh.tris[t].v[1]],
         c = mesh.nodes[mesh.tris[t].v[2]];
    double x0 = std::min({a.x, b.x, c.x}), x1 = std::max({a.x, b.x, c.x});
    double y0 = std::min({a.y, b.y, c.y}), y1 = std::max({a.y, b.y, c.y});
    int i0 = std::clamp((int)((x0 - lo_.x) / cell_), 0, nx_ - 1);
    int i1 = std::clamp((int)((x1 - lo_.x) / cell_), 0, nx_ - 1);
    int j0 = std::clamp((int)((y0 - lo_.y) / cell_), 0, ny_ - 1);
    int j1 = std::clamp((int)((y1 - lo_.y) / cell_), 0, ny_ - 1);
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j) bins_[(size_t)j * nx_ + i].push_back(t);
  }
}

std::optional<MeshLocator::Hit> MeshLocator::locate(const Vec2& p, double tol) const {
  int ci = std::clamp((int)((p.x - lo_.x) / cell_), 0, nx_ - 1);
  int cj = std::clamp((int)((p.y - lo_.y) / cell_), 0, ny_ - 1);
  Hit best;
  double best_min_lambda = -1e30;
  for (int ring = 0; ring <= 2; ++ring) {
    for (int dj = -ring; dj <= ring; ++dj)
      for (int di = -ring; di <= ring; ++di) {
        if (std::max(std::abs(di), std::abs(dj)) != ring) continue;
        int i = ci + di, j = cj + dj;
        if (i < 0 || j < 0 || i >= nx_ || j >= ny_) continue;
        for (int t : bins_[(size_t)j * nx_ + i]) {
          const Tri& tr = mesh_.tris[t];
          Vec2 a = mesh_.nodes[tr.v[0]], b = mesh_.nodes[tr.v[1]], c = mesh_.nodes[tr.v[2]];
          double det = (b - a).cross(c - a);
          if (det <= 0) continue;
          double l1 = (p - a).cross(c - a) / det;
          double l2 = (b - a).cross(p - a) / det;
          double l0 = 1.0 - l1 - l2;
          double mn = std::min({l0, l1, l2});
          if (mn > best_min_lambda) {
            best_min_lambda = mn;
            best = {t, {l0, l1, l2}};
          }
        }
      }
    if (best_min_lambda >= -1e-12) break;
  }
  if (best.tri < 0 || best_min_lambda < -tol) return std::nullopt;
  double sum = 0;
  for (double& l : best.lambda) {
    l = std::max(l, 0.0);
    sum += l;
  }
  for (double& l : best.lambda) l /= sum;
  return best;
}

double MeshLocator::interpolate(const std::vector<double>& nodal, const Vec2& p) const {
  auto hit = locate(p);
  if (!hit) throw std::runtime_error("MeshLocator: point outside mesh");
  const Tri& t = mesh_.tris[hit->tri];
  return hit->lambda[0] * nodal[t.v[0]] + hit->lambda[1] * nodal[t.v[1]] +
         hit->lambda[2] * nodal[t.v[2]];
}

}  // namespace fno
