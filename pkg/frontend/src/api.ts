import type { Contact, SessionView, TurnResponse } from "./types.js";

export class ApiRequestError extends Error {
    status: number;
    reason: string;

    constructor(status: number, reason: string, detail?: string) {
        super(`${status} ${reason}${detail ? `: ${detail}` : ""}`);
        this.status = status;
        this.reason = reason;
    }
}

type FetchLike = typeof fetch;

/** What the UI needs from a session backend (real or fake). */
export interface AssistantClient {
    createSession(): Promise<SessionView>;
    getSession(sessionId: string): Promise<SessionView>;
    endSession(sessionId: string): Promise<void>;
    postClass(sessionId: string, classId: number,
              expectedState?: number): Promise<TurnResponse>;
    postAudio(sessionId: string, wav: Uint8Array): Promise<TurnResponse>;
    contacts(): Promise<Contact[]>;
}

async function asJson<T>(response: Response): Promise<T> {
    if (response.ok) {
        return (await response.json()) as T;
    }
    let reason = response.statusText || "request_failed";
    let detail: string | undefined;
    try {
        const body = (await response.json()) as { error?: string; detail?: string };
        reason = body.error ?? reason;
        detail = body.detail;
    } catch {
        /* non-JSON error body */
    }
    throw new ApiRequestError(response.status, reason, detail);
}

/** Typed client for the assistant session API. */
export class SessionClient implements AssistantClient {
    private base: string;
    private fetchImpl: FetchLike;

    constructor(baseUrl: string = "", fetchImpl?: FetchLike) {
        this.base = baseUrl.replace(/\/$/, "");
        this.fetchImpl = fetchImpl ?? fetch.bind(globalThis);
    }

    createSession(): Promise<SessionView> {
        return this.request("POST", "/v1/sessions");
    }

    getSession(sessionId: string): Promise<SessionView> {
        return this.request("GET", `/v1/sessions/${sessionId}`);
    }

    endSession(sessionId: string): Promise<void> {
        return this.fetchImpl(`${this.base}/v1/sessions/${sessionId}`, {
            method: "DELETE",
        }).then(() => undefined);
    }

    postClass(sessionId: string, classId: number,
              expectedState?: number): Promise<TurnResponse> {
        const body: Record<string, number> = { class_id: classId };
        if (expectedState !== undefined) {
            body.expected_state = expectedState;
        }
        return this.request("POST", `/v1/sessions/${sessionId}/utterance`, {
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        });
    }

    postAudio(sessionId: string, wav: Uint8Array): Promise<TurnResponse> {
        return this.request("POST", `/v1/sessions/${sessionId}/utterance`, {
            headers: { "content-type": "audio/wav" },
            body: wav as unknown as BodyInit,
        });
    }

    async contacts(): Promise<Contact[]> {
        const doc = await this.request<{ contacts: Contact[] }>(
            "GET", "/v1/contacts");
        return doc.contacts;
    }

    private async request<T>(method: string, path: string,
                             init: RequestInit = {}): Promise<T> {
        const response = await this.fetchImpl(`${this.base}${path}`,
                                              { method, ...init });
        return asJson<T>(response);
    }
}
