/** Frame-flipper state: which raster of the current view is on screen.
 *
 * Blink mode alternates the current frame with the reference (frame 0)
 * so misregistration shows up as jitter; the overlay toggle swaps in the
 * server-rendered absolute-difference image.  Timer functions are
 * injected so the logic is testable without a DOM.
 */

export interface Display {
  frame: number;
  overlay: boolean;
}

type Scheduler = (cb: () => void, ms: number) => unknown;
type Canceler = (handle: unknown) => void;

export const BLINK_INTERVAL_MS = 350;

export class FrameFlipper {
  private frame = 0;
  private overlay = false;
  private blinkHandle: unknown = null;
  private showingReference = false;

  constructor(
    private frameCount: number,
    private readonly onChange: (d: Display) => void,
    private readonly schedule: Scheduler = (cb, ms) => setInterval(cb, ms),
    private readonly cancel: Canceler = (h) => clearInterval(h as number),
  ) {}

  reset(frameCount: number): void {
    this.stopBlink();
    this.frameCount = frameCount;
    this.frame = Math.min(1, frameCount - 1);
    this.overlay = false;
    this.emit();
  }

  display(): Display {
    return {
      frame: this.blinking() && this.showingReference ? 0 : this.frame,
      overlay: this.overlay,
    };
  }

  setFrame(k: number): void {
    this.frame = Math.max(0, Math.min(this.frameCount - 1, k));
    this.emit();
  }

  step(delta: number): void {
    this.setFrame(this.frame + delta);
  }

  currentFrame(): number {
    return this.frame;
  }

  toggleOverlay(): void {
    this.overlay = !this.overlay;
    this.emit();
  }

  blinking(): boolean {
    return this.blinkHandle !== null;
  }

  toggleBlink(): void {
    if (this.blinking()) {
      this.stopBlink();
      this.emit();
      return;
    }
    this.showingReference = false;
    this.blinkHandle = this.schedule(() => this.tick(), BLINK_INTERVAL_MS);
    this.emit();
  }

  stopBlink(): void {
    if (this.blinkHandle !== null) {
      this.cancel(this.blinkHandle);
      this.blinkHandle = null;
      this.showingReference = false;
    }
  }

  private tick(): void {
    this.showingReference = !this.showingReference;
    this.emit();
  }

  private emit(): void {
    this.onChange(this.display());
  }
}
