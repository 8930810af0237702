// Shapes of the JSON the review service sends and accepts. Field names
// mirror the wire format exactly, so everything stays snake_case here.

export type ItemKind = "ResidualDescription" | "MatchConflict" | "QcAudit";
export type ItemStatus = "pending" | "resolved";

export interface CandidateReport {
  report_id: string;
  report_time: string;
  description: string;
}

export interface ItemPayload {
  study_uid?: string;
  description?: string;
  report_id?: string | null;
  candidates?: CandidateReport[];
  labels?: Record<string, number | string>;
  evidence?: [string, string][];
}

export interface ReviewItem {
  item_id: string;
  kind: ItemKind;
  payload: ItemPayload;
  created_at: string;
  status: ItemStatus;
  // Present only once the item is resolved.
  resolution?: Record<string, unknown>;
  annotator?: string;
  resolved_at?: string;
}

export interface QueuePage {
  items: ReviewItem[];
  page: number;
  page_size: number;
  total: number;
}

export interface QueueStats {
  pending: number;
  resolved: number;
}

export interface LabelPayload {
  chest_wall: 0 | 1;
  pleura: 0 | 1;
  parenchyma: 0 | 1;
  cardio: 0 | 1;
  abnormal: 0 | 1;
  annotator: string;
}
