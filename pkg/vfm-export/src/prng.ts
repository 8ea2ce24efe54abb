/** Deterministic randomness seeded from strings, for reproducible projections. */

export function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** sfc32 generator; small, fast, and stable across platforms. */
export function makeRng(seed: string): () => number {
  let a = fnv1a(seed + ':a');
  let b = fnv1a(seed + ':b');
  let c = fnv1a(seed + ':c');
  let d = fnv1a(seed + ':d');
  return () => {
    a >>>= 0; b >>>= 0; c >>>= 0; d >>>= 0;
    const t = (a + b) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    d = (d + 1) | 0;
    const out = (t + d) | 0;
    c = (c + out) | 0;
    return (out >>> 0) / 4294967296;
  };
}

/** Standard normal via Box-Muller on the given uniform source. */
export function makeGaussian(rng: () => number): () => number {
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const value = spare;
      spare = null;
      return value;
    }
    let u = 0;
    let v = 0;
    do {
      u = rng();
    } while (u === 0);
    v = rng();
    const radius = Math.sqrt(-2.0 * Math.log(u));
    spare = radius * Math.sin(2.0 * Math.PI * v);
    return radius * Math.cos(2.0 * Math.PI * v);
  };
}
