/** Float PCM -> 16 kHz mono PCM16 WAV, matching the service's reader. */

export const TARGET_RATE = 16000;

/** Linear-interpolation resampling (adequate for speech capture). */
export function resampleLinear(samples: Float32Array, fromRate: number,
                               toRate: number): Float32Array {
    if (fromRate === toRate || samples.length === 0) {
        return samples;
    }
    const outLength = Math.max(1, Math.round(samples.length * toRate / fromRate));
    const out = new Float32Array(outLength);
    const step = fromRate / toRate;
    for (let i = 0; i < outLength; i++) {
        const position = i * step;
        const lo = Math.floor(position);
        const hi = Math.min(lo + 1, samples.length - 1);
        const frac = position - lo;
        out[i] = samples[Math.min(lo, samples.length - 1)] * (1 - frac)
            + samples[hi] * frac;
    }
    return out;
}

/** Encode mono float samples in [-1, 1] as a PCM16 RIFF/WAVE buffer. */
export function encodeWavPcm16(samples: Float32Array,
                               sampleRate: number): Uint8Array {
    const resampled = resampleLinear(samples, sampleRate, TARGET_RATE);
    const dataBytes = resampled.length * 2;
    const buffer = new ArrayBuffer(44 + dataBytes);
    const view = new DataView(buffer);

    const ascii = (offset: number, text: string) => {
        for (let i = 0; i < text.length; i++) {
            view.setUint8(offset + i, text.charCodeAt(i));
        }
    };
    ascii(0, "RIFF");
    view.setUint32(4, 36 + dataBytes, true);
    ascii(8, "WAVE");
    ascii(12, "fmt ");
    view.setUint32(16, 16, true);
    view.setUint16(20, 1, true); // PCM
    view.setUint16(22, 1, true); // mono
    view.setUint32(24, TARGET_RATE, true);
    view.setUint32(28, TARGET_RATE * 2, true);
    view.setUint16(32, 2, true);
    view.setUint16(34, 16, true);
    ascii(36, "data");
    view.setUint32(40, dataBytes, true);

    for (let i = 0; i < resampled.length; i++) {
        const clamped = Math.max(-1, Math.min(1, resampled[i]));
        view.setInt16(44 + i * 2, Math.round(clamped * 32767), true);
    }
    return new Uint8Array(buffer);
}
