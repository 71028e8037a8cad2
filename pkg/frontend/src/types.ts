export type Verdict = "accepted" | "rejected";

export interface DecisionInfo {
  verdict: Verdict;
  reason: string;
  reviewer: string;
  ts: string;
}

/** One registered view as the server reports it; never mutated locally
 * except optimistically while a decision POST is in flight. */
export interface ViewCard {
  view_id: string;
  camera_id: string;
  frame_count: number;
  status: "registered" | Verdict;
  autoflags: string[];
  thumbnail: string;
  decision: DecisionInfo | null;
}

export interface DecisionRequest {
  verdict: Verdict;
  reason: string;
  reviewer: string;
}
