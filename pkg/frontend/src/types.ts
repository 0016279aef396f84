/** Wire types mirroring the gateway's JSON contracts. */

export interface ColumnDef {
  name: string;
  value_type: string;
}

export interface TabularResult {
  schema: ColumnDef[];
  rows: (string | number | null)[][];
  provenance: Record<string, unknown>;
  masked_columns: string[];
}

export interface MarkChannels {
  x?: string;
  y?: string;
  fill?: string;
  size?: string;
}

export interface Mark {
  type: 'bar' | 'line' | 'dot' | 'area' | 'heatmap' | 'donut';
  channels: MarkChannels;
}

export interface ChartConfig {
  data: Record<string, string | number | null>[];
  config: {
    title: string;
    marks: Mark[];
  };
}

export interface ClarificationCandidate {
  id: string;
  name: string;
}

export interface Clarification {
  question: string;
  candidates: ClarificationCandidate[];
}

export type ResponseStatus = 'answered' | 'needs_clarification' | 'refused' | 'failed';

export interface AgentResponse {
  text: string;
  status: ResponseStatus;
  table?: TabularResult;
  chart?: ChartConfig;
  clarification?: Clarification;
}
