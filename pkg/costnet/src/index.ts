export { Tensor, Pcg32 } from "./tensor";
export * from "./layers";
export * from "./model";
export * from "./labels";
export * from "./io";
export * from "./train";
export * from "./infer";
