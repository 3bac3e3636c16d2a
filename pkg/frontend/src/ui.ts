import { ApiRequestError } from "./api.js";
import type { AssistantClient } from "./api.js";
import { MicRecorder } from "./mic.js";
import type {
    Contact, SessionView, SideEffect, TurnResponse, VocabEntry,
} from "./types.js";

const GROUPS: Array<{ label: string; match: (entry: VocabEntry) => boolean }> = [
    { label: "Wake words", match: (e) => e.category === "wake_word" },
    {
        label: "Commands",
        match: (e) => ["add", "search", "update", "delete", "call"]
            .includes(e.category),
    },
    {
        label: "Names",
        match: (e) => e.category.startsWith("name_")
            || e.category === "mom" || e.category === "dad",
    },
    { label: "Digits", match: (e) => e.category.startsWith("digit_") },
    { label: "Confirm", match: (e) => e.category === "yes" || e.category === "no" },
];

interface Banner {
    kind: "info" | "error" | "retry";
    text: string;
}

/**
 * The whole page. Stateless with respect to dialog logic: everything
 * rendered comes from the server's session view and contact list, so a
 * reload (or silent refresh after 409) reproduces the identical view.
 */
export class AssistantApp {
    readonly root: HTMLElement;
    private client: AssistantClient;
    private doc: Document;
    private view: SessionView | null = null;
    private contacts: Contact[] = [];
    private banner: Banner | null = null;
    private lastEffect: SideEffect | null = null;
    private queue: Promise<void> = Promise.resolve();
    private recorder: MicRecorder | null = null;
    private recording = false;

    constructor(root: HTMLElement, client: AssistantClient, doc?: Document) {
        this.root = root;
        this.client = client;
        this.doc = doc ?? document;
        this.render();
    }

    /** Resolves when all queued user actions have settled. */
    idle(): Promise<void> {
        return this.queue;
    }

    newSession(): Promise<void> {
        return this.enqueue(async () => {
            this.banner = null;
            this.lastEffect = null;
            this.view = await this.client.createSession();
            this.contacts = await this.client.contacts();
        });
    }

    clickClass(classId: number): Promise<void> {
        return this.enqueue(() => this.sendTurn(
            () => this.client.postClass(this.view!.session_id, classId,
                                        this.view!.state)));
    }

    sendAudio(wav: Uint8Array): Promise<void> {
        return this.enqueue(() => this.sendTurn(
            () => this.client.postAudio(this.view!.session_id, wav)));
    }

    refresh(): Promise<void> {
        return this.enqueue(() => this.refreshFromServer());
    }

    private enqueue(action: () => Promise<void>): Promise<void> {
        this.queue = this.queue.then(async () => {
            try {
                await action();
            } catch (error) {
                this.banner = {
                    kind: "error",
                    text: error instanceof Error ? error.message : String(error),
                };
            }
            this.render();
        });
        return this.queue;
    }

    private async refreshFromServer(): Promise<void> {
        if (this.view) {
            this.view = await this.client.getSession(this.view.session_id);
        }
        this.contacts = await this.client.contacts();
    }

    private async sendTurn(post: () => Promise<TurnResponse>): Promise<void> {
        if (!this.view) {
            this.banner = { kind: "error", text: "No session. Click New Session." };
            return;
        }
        this.banner = null;
        let response: TurnResponse;
        try {
            response = await post();
        } catch (error) {
            if (error instanceof ApiRequestError && error.status === 409) {
                await this.refreshFromServer(); // stale view: silently resync
                return;
            }
            throw error;
        }
        if (response.rejected) {
            this.banner = {
                kind: "retry",
                text: "Not understood, please try again."
                    + (response.confidence !== undefined
                        ? ` (confidence ${response.confidence.toFixed(2)})` : ""),
            };
        } else if (response.recognized) {
            const entry = this.view.active_vocabulary.find(
                (e) => e.class_id === response.recognized!.class_id);
            if (entry && response.recognized.confidence < 1.0) {
                this.banner = {
                    kind: "info",
                    text: `Heard: ${entry.display_text} `
                        + `(${(response.recognized.confidence * 100).toFixed(0)}%)`,
                };
            }
        }
        if (response.side_effect) {
            this.lastEffect = response.side_effect;
        }
        await this.refreshFromServer();
    }

    // --------------------------------------------------------------- render

    private el<K extends keyof HTMLElementTagNameMap>(
        tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
        const node = this.doc.createElement(tag);
        if (className) node.className = className;
        if (text !== undefined) node.textContent = text;
        return node;
    }

    render(): void {
        this.root.textContent = "";
        this.root.appendChild(this.renderHeader());
        if (this.banner) {
            const banner = this.el("div", `banner banner-${this.banner.kind}`,
                                   this.banner.text);
            banner.id = "banner";
            this.root.appendChild(banner);
        }
        if (this.lastEffect) {
            this.root.appendChild(this.renderSideEffect(this.lastEffect));
        }
        if (this.view) {
            const prompt = this.el("p", "prompt", this.view.prompt);
            prompt.id = "prompt";
            this.root.appendChild(prompt);
            this.root.appendChild(this.renderVocabulary(this.view.active_vocabulary));
            this.root.appendChild(this.renderTranscript());
        } else {
            this.root.appendChild(
                this.el("p", "prompt", "Click “New Session” to begin."));
        }
        this.root.appendChild(this.renderContacts());
    }

    private renderHeader(): HTMLElement {
        const header = this.el("header");
        const newButton = this.el("button", "primary", "New Session");
        newButton.id = "new-session";
        newButton.onclick = () => void this.newSession();
        header.appendChild(newButton);

        const badge = this.el("span", "state-badge");
        badge.id = "state-badge";
        if (this.view) {
            badge.textContent = `state ${this.view.state} · ${this.view.state_label}`;
            badge.dataset.state = String(this.view.state);
        } else {
            badge.textContent = "no session";
        }
        header.appendChild(badge);

        if (this.view?.language) {
            header.appendChild(
                this.el("span", "lang-badge", this.view.language));
        }

        if (MicRecorder.supported() && this.view) {
            const mic = this.el("button", "mic",
                                this.recording ? "Stop & send" : "Record");
            mic.id = "mic";
            mic.onclick = () => void this.toggleMic();
            header.appendChild(mic);
        }
        return header;
    }

    private renderVocabulary(vocabulary: VocabEntry[]): HTMLElement {
        const container = this.el("div");
        container.id = "vocab";
        for (const group of GROUPS) {
            const entries = vocabulary.filter(group.match);
            if (!entries.length) continue;
            const fieldset = this.el("fieldset", "vocab-group");
            fieldset.appendChild(this.el("legend", undefined, group.label));
            for (const entry of entries) {
                const button = this.el("button", "vocab-btn", entry.display_text);
                button.dataset.classId = String(entry.class_id);
                button.dataset.category = entry.category;
                button.dataset.language = entry.language;
                if (entry.category === "wake_word"
                    || entry.category.startsWith("digit_")) {
                    button.textContent = entry.category === "wake_word"
                        ? `${entry.display_text} (${entry.language})`
                        : entry.display_text;
                }
                button.onclick = () => void this.clickClass(entry.class_id);
                fieldset.appendChild(button);
            }
            container.appendChild(fieldset);
        }
        return container;
    }

    private renderTranscript(): HTMLElement {
        const list = this.el("ol", "transcript");
        list.id = "transcript";
        for (const turn of this.view?.transcript ?? []) {
            list.appendChild(
                this.el("li", `turn turn-${turn.role}`,
                        `${turn.role === "user" ? "You" : "VA"}: ${turn.text}`));
        }
        return list;
    }

    private renderSideEffect(effect: SideEffect): HTMLElement {
        const text = effect.phone
            ? `${effect.type}: ${effect.name} (${effect.phone})`
            : `${effect.type}: ${effect.name}`;
        const node = this.el("div", "banner banner-effect", text);
        node.id = "side-effect";
        return node;
    }

    private renderContacts(): HTMLElement {
        const panel = this.el("section", "contacts");
        panel.id = "contacts";
        panel.appendChild(this.el("h2", undefined, "Contacts"));
        const list = this.el("ul");
        for (const contact of this.contacts) {
            const item = this.el("li", "contact",
                                 `${contact.name} — ${contact.phone}`);
            item.dataset.name = contact.name;
            item.dataset.phone = contact.phone;
            list.appendChild(item);
        }
        if (!this.contacts.length) {
            list.appendChild(this.el("li", "contact-empty", "(none yet)"));
        }
        panel.appendChild(list);
        return panel;
    }

    private async toggleMic(): Promise<void> {
        if (!this.recording) {
            this.recorder = new MicRecorder();
            await this.recorder.start();
            this.recording = true;
            this.render();
            return;
        }
        const wav = await this.recorder!.stop();
        this.recording = false;
        this.recorder = null;
        await this.sendAudio(wav);
    }
}
