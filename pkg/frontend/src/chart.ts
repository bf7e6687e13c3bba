// Inline-SVG vitals chart: raw timeseries polyline, dashed forecast
// overlay continuing from the last sample, and a threshold rule line.
// Values are plotted exactly as fetched; no client-side smoothing.

import type { Forecast, TimeseriesPoint } from "./types.js";

export interface ChartOptions {
  width?: number;
  height?: number;
  threshold?: number | null;
}

export function chartSvg(
  points: TimeseriesPoint[],
  forecast: Forecast | null,
  options: ChartOptions = {},
): string {
  const width = options.width ?? 560;
  const height = options.height ?? 160;
  const pad = 28;
  if (points.length === 0) {
    return `<svg class="chart" viewBox="0 0 ${width} ${height}"><text x="12" y="24" fill="#8b949e">no data</text></svg>`;
  }
  const t0 = points[0].timestamp;
  let t1 = points[points.length - 1].timestamp;
  const forecastPoints: TimeseriesPoint[] = [];
  if (forecast && forecast.values.length > 0) {
    const stepMs = forecast.step_seconds * 1000;
    forecast.values.forEach((value, i) => {
      forecastPoints.push({ timestamp: t1 + stepMs * (i + 1), value });
    });
    t1 = forecastPoints[forecastPoints.length - 1].timestamp;
  }
  const values = [
    ...points.map((p) => p.value),
    ...forecastPoints.map((p) => p.value),
    ...(options.threshold != null ? [options.threshold] : []),
  ];
  const vMin = Math.min(...values);
  const vMax = Math.max(...values);
  const span = vMax - vMin || 1;
  const x = (t: number) =>
    t1 === t0 ? pad : pad + ((t - t0) / (t1 - t0)) * (width - 2 * pad);
  const y = (v: number) => height - pad - ((v - vMin) / span) * (height - 2 * pad);
  const path = (pts: TimeseriesPoint[]) =>
    pts.map((p) => `${x(p.timestamp).toFixed(1)},${y(p.value).toFixed(1)}`).join(" ");

  let svg = `<svg class="chart" viewBox="0 0 ${width} ${height}">`;
  if (options.threshold != null) {
    const ty = y(options.threshold).toFixed(1);
    svg += `<line x1="${pad}" y1="${ty}" x2="${width - pad}" y2="${ty}" class="rule"/>`;
    svg += `<text x="${width - pad + 2}" y="${ty}" class="rule-label">${options.threshold}</text>`;
  }
  svg += `<polyline points="${path(points)}" class="series"/>`;
  if (forecastPoints.length > 0) {
    const bridge = [points[points.length - 1], ...forecastPoints];
    svg += `<polyline points="${path(bridge)}" class="forecast"/>`;
    if (forecast?.breach) {
      const bp = forecastPoints[forecast.breach.first_breach_step - 1];
      if (bp) {
        svg += `<circle cx="${x(bp.timestamp).toFixed(1)}" cy="${y(bp.value).toFixed(1)}" r="4" class="breach"/>`;
      }
    }
  }
  svg += `<text x="4" y="${y(vMax) + 4}" class="axis">${vMax.toFixed(0)}</text>`;
  svg += `<text x="4" y="${y(vMin) + 4}" class="axis">${vMin.toFixed(0)}</text>`;
  svg += "</svg>";
  return svg;
}
