// benchmarks filled in later
int main(){return 0;}
