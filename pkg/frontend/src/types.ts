export interface VocabEntry {
    class_id: number;
    category: string;
    language: string;
    display_text: string;
}

export interface TranscriptTurn {
    role: "user" | "assistant";
    text: string;
}

export interface SessionView {
    session_id: string;
    state: number;
    state_label: string;
    language: string | null;
    prompt: string;
    active_vocabulary: VocabEntry[];
    transcript: TranscriptTurn[];
}

export interface SideEffect {
    type: string;
    name: string;
    phone: string | null;
}

export interface Recognized {
    class_id: number;
    confidence: number;
}

export interface TurnResponse {
    recognized?: Recognized;
    rejected?: boolean;
    confidence?: number;
    state: number;
    state_label: string;
    session_state?: number;
    prompt: string;
    active_vocabulary?: VocabEntry[];
    side_effect?: SideEffect;
}

export interface Contact {
    name: string;
    phone: string;
}

export interface ApiError {
    status: number;
    error: string;
    detail?: string;
}
