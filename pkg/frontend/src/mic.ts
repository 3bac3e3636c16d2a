import { encodeWavPcm16 } from "./wav.js";

/** Microphone capture via WebAudio; progressive enhancement only. */
export class MicRecorder {
    private chunks: Float32Array[] = [];
    private context: AudioContext | null = null;
    private stream: MediaStream | null = null;
    private processor: ScriptProcessorNode | null = null;

    static supported(): boolean {
        return typeof navigator !== "undefined"
            && !!navigator.mediaDevices?.getUserMedia
            && typeof AudioContext !== "undefined";
    }

    async start(): Promise<void> {
        this.stream = await navigator.mediaDevices.getUserMedia({ audio: true });
        this.context = new AudioContext();
        const source = this.context.createMediaStreamSource(this.stream);
        this.processor = this.context.createScriptProcessor(4096, 1, 1);
        this.chunks = [];
        this.processor.onaudioprocess = (event) => {
            this.chunks.push(new Float32Array(event.inputBuffer.getChannelData(0)));
        };
        source.connect(this.processor);
        this.processor.connect(this.context.destination);
    }

    /** Stop capture and return a 16 kHz mono PCM16 WAV. */
    async stop(): Promise<Uint8Array> {
        const rate = this.context?.sampleRate ?? 48000;
        this.processor?.disconnect();
        this.stream?.getTracks().forEach((track) => track.stop());
        await this.context?.close();

        const total = this.chunks.reduce((n, c) => n + c.length, 0);
        const merged = new Float32Array(total);
        let offset = 0;
        for (const chunk of this.chunks) {
            merged.set(chunk, offset);
            offset += chunk.length;
        }
        this.chunks = [];
        this.context = null;
        this.stream = null;
        this.processor = null;
        return encodeWavPcm16(merged, rate);
    }
}
