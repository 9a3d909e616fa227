/**
 * Theme-anchor geometry and the live steering-weight preview.
 *
 * The client recomputes these during a drag so the overlay stays responsive,
 * but the server's computation on release is authoritative for the rewrite.
 * Both sides must therefore implement the same math: anchors on a regular
 * k-gon ordered by theme id (first at twelve o'clock, clockwise), and a
 * proximity softmax w_i = exp(-d_i / tau) / sum_j exp(-d_j / tau) over the
 * k nearest anchors, distance ties broken by theme id.
 */

export interface ThemeAnchor {
  themeId: string;
  title: string;
  x: number;
  y: number;
}

export interface ThemeWeight {
  themeId: string;
  title: string;
  distance: number;
  weight: number;
}

/** Unit-circle anchor per theme, matching the server's layout exactly. */
export function anchorLayout(
  themes: Array<{ id: string; title: string }>,
): ThemeAnchor[] {
  const ordered = [...themes].sort((a, b) => (a.id < b.id ? -1 : 1));
  const k = ordered.length;
  return ordered.map((theme, i) => {
    const angle = Math.PI / 2 - (2 * Math.PI * i) / k;
    return {
      themeId: theme.id,
      title: theme.title,
      x: Math.cos(angle),
      y: Math.sin(angle),
    };
  });
}

/**
 * Weights over the k nearest theme anchors of a drag position, nearest
 * first. Logits are shifted by their max before exponentiation so extreme
 * tau values stay finite.
 */
export function steeringPreview(
  x: number,
  y: number,
  anchors: ThemeAnchor[],
  k = 3,
  tau = 0.5,
): ThemeWeight[] {
  if (anchors.length === 0) {
    throw new RangeError("steering preview needs at least one theme anchor");
  }
  if (tau <= 0) {
    throw new RangeError("tau must be positive");
  }
  const ranked = anchors
    .map((anchor) => ({
      themeId: anchor.themeId,
      title: anchor.title,
      distance: Math.hypot(x - anchor.x, y - anchor.y),
    }))
    .sort((a, b) =>
      a.distance !== b.distance
        ? a.distance - b.distance
        : a.themeId < b.themeId
          ? -1
          : 1,
    )
    .slice(0, Math.max(1, k));

  const logits = ranked.map((row) => -row.distance / tau);
  const top = Math.max(...logits);
  const exps = logits.map((l) => Math.exp(l - top));
  const total = exps.reduce((acc, e) => acc + e, 0);
  return ranked.map((row, i) => ({ ...row, weight: (exps[i] as number) / total }));
}
