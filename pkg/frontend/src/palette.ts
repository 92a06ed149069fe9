import palettes from "./palettes.json";
import type { RGB } from "./types";

// Class palettes are configuration: one entry per supported class count.
// The server sends its palette with every prediction; these local tables
// exist so class-selector chips and click markers can render before the
// first prediction arrives, and they must stay identical to the served
// colors (pinned by the end-to-end test).

const TABLES: Record<string, number[][]> = palettes;

export function paletteFor(classCount: number): RGB[] {
  const table = TABLES[String(classCount)];
  if (!table) {
    throw new Error(`no configured palette for ${classCount} classes`);
  }
  return table.map((row): RGB => [row[0], row[1], row[2]]);
}

/** Stable color for a class index; pure in (palette, index). */
export function classColor(palette: RGB[], classIndex: number): RGB {
  const color = palette[classIndex];
  if (!color) {
    throw new Error(`class ${classIndex} outside palette of ${palette.length}`);
  }
  return color;
}

export function cssColor(color: RGB, alpha = 1): string {
  return `rgba(${color[0]}, ${color[1]}, ${color[2]}, ${alpha})`;
}
